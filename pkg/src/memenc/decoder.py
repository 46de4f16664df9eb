"""Membership decoding with the secret key.

The encoding-time discriminator is never shipped.  Decoding regenerates
the keyed synthetic anchors, queries the released model for their
representations, trains a fresh one-hidden-layer discriminator on those
alone, and then scores arbitrary records.
"""

from __future__ import annotations

import json
import threading
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

import numpy as np
from scipy.stats import binom

from .encoder import LOG_EPS, Discriminator, MappingSpec, mapping_for_key, represent
from .nn import EPS, SGD, MlpModel, backprop, predict_proba
from .syndata import EncodingKey, gen_synthetic_data


class KeyMismatchError(ValueError):
    """The oracle's representation does not fit the key's mapping."""


# ---------------------------------------------------------------- oracles


class ModelOracle:
    """Query surface returning ``h(x)`` for a batch of records."""

    dim: int
    n_inputs: int

    def __init__(self):
        self.queries = 0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"record dimension {x.shape[1]} != model input {self.n_inputs}")
        self.queries += len(x)
        return self._query(x)

    def _query(self, x):
        raise NotImplementedError


class WhiteboxOracle(ModelOracle):
    """Direct access to a released model's hidden activations."""

    def __init__(self, model: MlpModel, mapping: MappingSpec):
        super().__init__()
        if mapping.mode != "whitebox":
            raise ValueError("whitebox oracle needs a whitebox mapping")
        self.model = model
        self.mapping = mapping
        self.dim = mapping.dim
        self.n_inputs = model.n_inputs

    @classmethod
    def from_key(cls, model: MlpModel, key: EncodingKey) -> "WhiteboxOracle":
        try:
            mapping = mapping_for_key(model, key)
        except (IndexError, ValueError) as exc:
            raise KeyMismatchError(f"key mapping does not fit the model: {exc}") from exc
        return cls(model, mapping)

    def _query(self, x):
        return represent(self.model, self.mapping, x)


class BlackboxOracle(ModelOracle):
    """Wraps any function returning probability vectors; applies the
    floored log itself."""

    def __init__(self, predict: Callable, n_inputs: int, n_outputs: int):
        super().__init__()
        self.predict = predict
        self.n_inputs = n_inputs
        self.dim = n_outputs

    @classmethod
    def from_model(cls, model: MlpModel) -> "BlackboxOracle":
        return cls(lambda x: predict_proba(model, x), model.n_inputs, model.n_classes)

    def _query(self, x):
        probs = np.atleast_2d(np.asarray(self.predict(x), dtype=np.float64))
        if probs.shape != (len(x), self.dim):
            raise KeyMismatchError(
                f"prediction API returned shape {probs.shape}, expected {(len(x), self.dim)}")
        return np.maximum(np.log(np.maximum(probs, EPS)), LOG_EPS)


class HttpPredictor:
    """Client for a prediction endpoint.

    Protocol: ``POST`` a JSON array of features (one record) and receive a
    JSON array of class probabilities.  A JSON array of arrays is a batch and
    gets an array of arrays back.
    """

    def __init__(self, url: str, timeout: float = 30.0, batch: bool = True):
        self.url = url
        self.timeout = timeout
        self.batch = batch

    def _post(self, payload):
        req = urllib.request.Request(self.url, data=json.dumps(payload).encode(),
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read())

    def __call__(self, x):
        x = np.atleast_2d(x)
        if self.batch:
            return np.asarray(self._post(x.tolist()), dtype=np.float64)
        return np.array([self._post(row.tolist()) for row in x], dtype=np.float64)


def http_oracle(url: str, n_inputs: int, n_outputs: int, batch: bool = True) -> BlackboxOracle:
    return BlackboxOracle(HttpPredictor(url, batch=batch), n_inputs, n_outputs)


def serve_predictions(model: MlpModel, host: str = "127.0.0.1", port: int = 0):
    """Serve ``model`` on the prediction protocol in a daemon thread.

    Returns the server; ``server.server_address`` has the bound port and
    ``server.shutdown()`` stops it.
    """

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            try:
                body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                x = np.asarray(body, dtype=np.float64)
                probs = predict_proba(model, x)
                out = json.dumps(probs.tolist()).encode()
                self.send_response(200)
            except Exception as exc:  # report any bad request to the client
                out = json.dumps({"error": str(exc)}).encode()
                self.send_response(400)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# ---------------------------------------------------------------- reconstruction


@dataclass
class InferenceConfig:
    hidden: int = 128
    epochs: int = 80
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 8


@dataclass
class InferenceDiscriminator(Discriminator):
    train_accuracy: float = float("nan")
    config: InferenceConfig = field(default_factory=InferenceConfig)


def reconstruct_discriminator(oracle: ModelOracle, key: EncodingKey, decoder_seed: int = 0,
                              cfg: InferenceConfig | None = None) -> InferenceDiscriminator:
    """Train a fresh discriminator on the keyed synthetic anchors only."""
    cfg = cfg or InferenceConfig()
    if oracle.n_inputs != key.q:
        raise KeyMismatchError(f"key dimension {key.q} != model input {oracle.n_inputs}")
    expected = (key.mapping or {}).get("dim")
    if expected is not None and expected != oracle.dim:
        raise KeyMismatchError(f"key mapping has dimension {expected}, oracle has {oracle.dim}")
    x, z = gen_synthetic_data(key).stacked()
    h = oracle(x)
    if h.shape != (len(x), oracle.dim):
        raise KeyMismatchError(f"oracle returned shape {h.shape}")

    disc = Discriminator.mlp(oracle.dim, decoder_seed, cfg.hidden)
    rng = np.random.Generator(np.random.PCG64(decoder_seed))
    opt = SGD(cfg.lr, cfg.momentum)
    n = len(z)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.step(disc.net, backprop(disc.net, h[idx], z[idx], loss="bce"))
    acc = float(np.mean((disc.prob(h) >= 0.5) == (z == 1)))
    return InferenceDiscriminator(disc.net, train_accuracy=acc, config=cfg)


def membership_score(d: Discriminator, oracle: ModelOracle, x) -> np.ndarray | float:
    """``d(h(x))``; a scalar for one record, an array for a batch."""
    x = np.asarray(x, dtype=np.float64)
    scores = d.prob(oracle(x))
    return float(scores[0]) if x.ndim == 1 else scores


# ---------------------------------------------------------------- watermarking


@dataclass
class WatermarkVerdict:
    scores: np.ndarray
    detected: int
    total: int
    tau: float
    significance: float
    p_value: float
    accept: bool

    def to_dict(self) -> dict:
        return {"detected": self.detected, "total": self.total,
                "detected_fraction": self.detected / self.total, "tau": self.tau,
                "significance": self.significance, "p_value": self.p_value,
                "accept": self.accept}


def binomial_pvalue(detected: int, total: int) -> float:
    """One-sided P(X >= detected) for X ~ Binomial(total, 1/2)."""
    return float(binom.sf(detected - 1, total, 0.5))


def verify_watermark(d: Discriminator, oracle: ModelOracle, claimed, tau: float = 0.7,
                     significance: float = 1e-6) -> WatermarkVerdict:
    """Accept ownership when enough claimed records decode as members.

    A record is detected when its score is at least 0.5.  Acceptance needs
    the detected fraction to reach ``tau`` and the binomial test against a
    chance rate of one half to fall below ``significance``.
    """
    claimed = np.atleast_2d(np.asarray(claimed, dtype=np.float64))
    if claimed.size == 0 or len(claimed) == 0:
        raise ValueError("empty claim set")
    scores = d.prob(oracle(claimed))
    detected = int(np.sum(scores >= 0.5))
    total = len(scores)
    p = binomial_pvalue(detected, total)
    accept = detected / total >= tau and p < significance
    return WatermarkVerdict(scores, detected, total, tau, significance, p, bool(accept))


# ---------------------------------------------------------------- reconstruction attack


def reconstruct_record(d: Discriminator, oracle: ModelOracle, candidates):
    """Pick the candidate completion most confidently scored as a member.

    Returns ``(best_index, scores)``; ties go to the lowest index.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or len(candidates) == 0:
        raise ValueError("need a non-empty 2-D array of candidate records")
    scores = d.prob(oracle(candidates))
    return int(np.argmax(scores)), scores


def completion_candidates(record, missing, n_random: int, rng, low=None, high=None,
                          pool=None):
    """The true record followed by ``n_random`` alternatives that differ only
    on the ``missing`` feature indices.

    Alternatives copy the missing features from random rows of ``pool`` when
    given, otherwise draw them uniformly in ``[low, high]``.
    """
    record = np.asarray(record, dtype=np.float64)
    out = np.repeat(record[None, :], n_random + 1, axis=0)
    missing = np.asarray(missing)
    for i in range(1, n_random + 1):
        if pool is not None:
            out[i, missing] = pool[rng.integers(len(pool)), missing]
        else:
            out[i, missing] = rng.uniform(low, high, size=len(missing))
    return out


def decode_auc(model: MlpModel, key: EncodingKey, members, nonmembers, decoder_seed: int = 0,
               cfg: InferenceConfig | None = None, blackbox: bool | None = None):
    """Convenience: rebuild the decoder for ``model`` and return
    ``(auc, precision, recall, discriminator)`` for members vs nonmembers."""
    from .metrics import ScoreSet, auc, precision_recall

    mode = (key.mapping or {}).get("mode", "whitebox")
    if blackbox or mode == "blackbox":
        oracle = BlackboxOracle.from_model(model)
    else:
        oracle = WhiteboxOracle.from_key(model, key)
    d = reconstruct_discriminator(oracle, key, decoder_seed, cfg)
    s = ScoreSet.from_pools(d.prob(oracle(members)), d.prob(oracle(nonmembers)))
    p, r = precision_recall(s, 0.5)
    return auc(s), p, r, d
