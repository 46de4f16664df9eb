"""Membership encoding: joint training of a classifier and a membership
discriminator so that a keyed decoder can later recognise the selected
training records.

Each iteration takes ``k`` discriminator/encoder steps on a batch drawn
from the member pool (selected client records + synthetic members) and
the nonmember pool (remaining client records + synthetic nonmembers),
descending binary cross-entropy through ``d(h(x))`` for both the
discriminator and the classifier, then one cross-entropy step for the
classifier on client data.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import (
    EPS,
    SGD,
    MlpModel,
    accuracy,
    backprop,
    forward_all,
    init_mlp,
    log_softmax,
    mean_cross_entropy,
    sigmoid,
)
from .syndata import STREAM_UNIT_MASK, EncodingKey, KeyedStream, gen_synthetic_data

log = logging.getLogger(__name__)

LOG_EPS = math.log(EPS)


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- datasets


@dataclass
class SplitDataset:
    """Client data partitioned into encoded members and nonmembers, plus a
    hold-out test set."""

    x_m: np.ndarray
    y_m: np.ndarray
    x_nm: np.ndarray
    y_nm: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    member_index: np.ndarray | None = None  # positions of members in the original D_C

    def __post_init__(self):
        arrays = {k: np.asarray(getattr(self, k), dtype=np.float64)
                  for k in ("x_m", "x_nm", "x_test")}
        q = next((a.shape[1] for a in arrays.values() if a.ndim == 2 and a.size), 0)
        for name, arr in arrays.items():
            if arr.size == 0:
                arr = arr.reshape(0, q)
            elif arr.ndim != 2:
                raise ValueError(f"{name} must be a 2-D array of rows")
            setattr(self, name, arr)
        for name in ("y_m", "y_nm", "y_test"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())
        dims = {a.shape[1] for a in (self.x_m, self.x_nm, self.x_test) if a.size}
        if len(dims) > 1:
            raise ValueError(f"feature dimensions disagree: {sorted(dims)}")
        for x, y in ((self.x_m, self.y_m), (self.x_nm, self.y_nm), (self.x_test, self.y_test)):
            if len(x) != len(y):
                raise ValueError("features and labels differ in length")
            if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
                raise ValueError("label outside [0, n_classes)")

    @property
    def q(self) -> int:
        return self.x_m.shape[1]

    @property
    def x_train(self) -> np.ndarray:
        return np.vstack([self.x_m, self.x_nm])

    @property
    def y_train(self) -> np.ndarray:
        return np.concatenate([self.y_m, self.y_nm])


def select_members(x, y, fraction: float = 0.2, seed: int | None = 0,
                   predicate: Callable | None = None, test=None,
                   n_classes: int | None = None) -> SplitDataset:
    """Split client records into members and nonmembers.

    Random mode picks ``floor(fraction * len)`` records without replacement.
    With ``predicate(x_row, y_row) -> bool`` every matching record becomes a
    member and ``fraction`` is ignored.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if predicate is not None:
        chosen = np.array([i for i in range(n) if predicate(x[i], y[i])], dtype=np.int64)
    else:
        if not 0 < fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        rng = np.random.Generator(np.random.PCG64(seed))
        chosen = np.sort(rng.choice(n, size=int(math.floor(fraction * n)), replace=False))
    if chosen.size == 0:
        raise ValueError("member selection is empty; nothing to encode")
    is_member = np.zeros(n, dtype=bool)
    is_member[chosen] = True
    if is_member.all():
        warnings.warn("every client record is a member; only synthetic nonmembers anchor "
                      "the nonmember side", stacklevel=2)
    if test is None:
        x_test, y_test = np.empty((0, x.shape[1])), np.empty(0, dtype=np.int64)
    else:
        x_test, y_test = test
    if n_classes is None:
        n_classes = int(max(y.max(), np.max(y_test, initial=0))) + 1
    return SplitDataset(x[is_member], y[is_member], x[~is_member], y[~is_member],
                        x_test, y_test, n_classes, member_index=chosen)


# ---------------------------------------------------------------- mapping


@dataclass
class MappingSpec:
    """Which representation the discriminator reads.

    whitebox: ``tanh`` of the selected units of hidden layer ``layer``
    (1-based, so ``layer=2`` is the second hidden layer).
    blackbox: ``log`` of the softmax output, floored at ``log(1e-12)``.
    """

    mode: str
    layer: int | None = None
    units: np.ndarray | None = None
    n_outputs: int | None = None

    @property
    def dim(self) -> int:
        return len(self.units) if self.mode == "whitebox" else int(self.n_outputs)

    def describe(self) -> dict:
        return {"mode": self.mode, "layer": self.layer,
                "units": None if self.units is None else [int(u) for u in self.units],
                "n_outputs": self.n_outputs}


def build_mapping(model: MlpModel, key: EncodingKey, mode: str = "whitebox",
                  layer: int | None = None, unit_fraction: float = 0.5) -> MappingSpec:
    if mode == "blackbox":
        return MappingSpec("blackbox", n_outputs=model.n_classes)
    if mode != "whitebox":
        raise ValueError(f"unknown mapping mode {mode!r}")
    n_hidden = len(model.layers) - 1
    if layer is None:
        layer = n_hidden
    if not 1 <= layer <= n_hidden:
        raise IndexError(f"hidden layer {layer} out of range 1..{n_hidden}")
    if not 0 < unit_fraction <= 1:
        raise ValueError("unit_fraction must be in (0, 1]")
    width = model.layers[layer - 1].n_out
    k = int(math.floor(unit_fraction * width))
    if k < 1:
        raise ValueError("unit mask would be empty")
    if k == width:
        units = np.arange(width)
    else:
        units = np.sort(KeyedStream(key.seed, STREAM_UNIT_MASK).permutation(width)[:k])
    return MappingSpec("whitebox", layer=layer, units=units)


def mapping_for_key(model: MlpModel, key: EncodingKey) -> MappingSpec:
    """Rebuild the mapping recorded in ``key.mapping``."""
    m = key.mapping or {}
    return build_mapping(model, key, m.get("mode", "whitebox"), m.get("layer"),
                         m.get("unit_fraction", 0.5))


def represent(model: MlpModel, spec: MappingSpec, x, cache=None) -> np.ndarray:
    """``h(x)`` for a batch of rows."""
    if cache is None:
        cache = forward_all(model, np.atleast_2d(x))
    if spec.mode == "whitebox":
        return np.tanh(cache.activations[spec.layer - 1][:, spec.units])
    return np.maximum(log_softmax(cache.logits), LOG_EPS)


def _mapping_inject(model: MlpModel, spec: MappingSpec, cache, h, dh) -> dict:
    """Turn dL/dh into an injected gradient on a layer's activations."""
    if spec.mode == "whitebox":
        j = spec.layer - 1
        g = np.zeros_like(cache.activations[j])
        g[:, spec.units] = dh * (1.0 - h * h)
        return {j: g}
    dh = np.where(h > LOG_EPS, dh, 0.0)
    # d log_softmax_i / d logit_j = delta_ij - p_j
    g = dh - cache.probs * dh.sum(axis=1, keepdims=True)
    return {len(model.layers) - 1: g}


# ---------------------------------------------------------------- discriminator


@dataclass
class Discriminator:
    """Sigmoid membership classifier over mapped representations.

    ``net`` has a single identity output unit holding the logit.
    """

    net: MlpModel

    @classmethod
    def linear(cls, dim: int, seed: int) -> "Discriminator":
        return cls(init_mlp([dim, 1], seed))

    @classmethod
    def mlp(cls, dim: int, seed: int, hidden: int = 128) -> "Discriminator":
        return cls(init_mlp([dim, hidden, 1], seed))

    def logit(self, h) -> np.ndarray:
        return forward_all(self.net, np.atleast_2d(h)).logits[:, 0]

    def prob(self, h) -> np.ndarray:
        return sigmoid(self.logit(h))


def encoding_loss(dhat, z) -> float:
    """Mean binary cross-entropy of membership predictions."""
    dhat = np.asarray(dhat, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if dhat.shape != z.shape:
        raise ValueError("prediction and label vectors differ in length")
    d = np.clip(dhat, EPS, 1.0 - EPS)
    return float(-np.mean(z * np.log(d) + (1.0 - z) * np.log(1.0 - d)))


# ---------------------------------------------------------------- training


@dataclass
class EncodingConfig:
    epochs: int = 80
    batch_size: int = 64
    k: int = 1  # discriminator/encoder steps per iteration; 0 disables encoding
    lr_disc: float = 0.01
    lr_model: float = 0.02
    momentum: float = 0.9
    member_fraction: float = 0.2
    synthetic_ratio: float = 1.0  # weight of a synthetic record relative to a client record
    decay_epochs: list[int] = field(default_factory=list)
    decay_factor: float = 0.1
    seed: int = 0  # batch sampling
    disc_seed: int = 1  # discriminator init

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2 or self.k < 0:
            raise ValueError("epochs and k must be >= 0, batch_size >= 2")
        if not (self.lr_disc > 0 and self.lr_model > 0):
            raise ValueError("learning rates must be positive")
        if not 0 < self.member_fraction <= 1:
            raise ValueError("member_fraction must be in (0, 1]")
        if not self.synthetic_ratio >= 0:
            raise ValueError("synthetic_ratio must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodingReport:
    ce_member: list[float] = field(default_factory=list)
    ce_nonmember: list[float] = field(default_factory=list)
    ce_test: list[float] = field(default_factory=list)
    enc_loss: list[float] = field(default_factory=list)
    test_accuracy: float = float("nan")
    elapsed: float = 0.0

    @property
    def n_epochs(self) -> int:
        return len(self.ce_test)

    def rows(self) -> list[dict]:
        out = []
        for e in range(self.n_epochs):
            out.append({
                "epoch": e + 1,
                "ce_member": self.ce_member[e],
                "ce_nonmember": self.ce_nonmember[e],
                "ce_test": self.ce_test[e],
                "enc_loss": self.enc_loss[e] if self.enc_loss else float("nan"),
            })
        return out


def _ce_or_nan(model, x, y):
    return mean_cross_entropy(model, x, y) if len(y) else float("nan")


class _PoolSampler:
    """Stratified discriminator batches: half members, half nonmembers,
    each half drawn with replacement from client + synthetic records."""

    def __init__(self, client_m, client_nm, syn, ratio, rng):
        self.rng = rng
        self.halves = []
        for client, synth in ((client_m, syn.members), (client_nm, syn.nonmembers)):
            x = np.vstack([client, synth]) if len(client) else synth
            w = np.concatenate([np.ones(len(client)), np.full(len(synth), ratio)])
            if w.sum() == 0:
                raise ValueError("empty discriminator pool")
            self.halves.append((x, w / w.sum()))

    def sample(self, b):
        sizes = (b // 2, b - b // 2)
        xs, zs = [], []
        for (x, p), size, bit in zip(self.halves, sizes, (1.0, 0.0)):
            idx = self.rng.choice(len(x), size=size, p=p)
            xs.append(x[idx])
            zs.append(np.full(size, bit))
        return np.vstack(xs), np.concatenate(zs)


def encoder_step(model, disc: Discriminator, spec: MappingSpec, x, z,
                 model_opt: SGD, disc_opt: SGD) -> float:
    """One joint descent step of the encoding loss on ``theta`` and ``phi``."""
    cache = forward_all(model, x)
    h = represent(model, spec, x, cache)
    d_grads = backprop(disc.net, h, z, loss="bce")
    inject = _mapping_inject(model, spec, cache, h, d_grads.input_grad)
    m_grads = backprop(model, x, loss=None, inject=inject, cache=cache)
    loss = encoding_loss(sigmoid(forward_all(disc.net, h).logits[:, 0]), z)
    disc_opt.step(disc.net, d_grads)
    model_opt.step(model, m_grads)
    return loss


def membership_encoding(split: SplitDataset, key: EncodingKey, model: MlpModel,
                        cfg: EncodingConfig, mapping: MappingSpec | None = None,
                        discriminator: Discriminator | None = None,
                        frozen: Sequence[np.ndarray] | None = None,
                        on_epoch: Callable | None = None):
    """Train a copy of ``model`` with membership encoding.

    Returns ``(model, discriminator, report)``.  ``frozen`` (one boolean
    buffer per parameter) pins entries at their current value.
    ``on_epoch(epoch, model)`` is called after every epoch.
    """
    model = model.copy()
    if mapping is None:
        mapping = mapping_for_key(model, key)
    if discriminator is None:
        discriminator = Discriminator.linear(mapping.dim, cfg.disc_seed)
    else:
        discriminator = Discriminator(discriminator.net.copy())
    if key.q != split.q:
        raise ValueError(f"key dimension {key.q} does not match data dimension {split.q}")
    return _train(split, model, cfg, key, mapping, discriminator, frozen, on_epoch)


def train_baseline(split: SplitDataset, model: MlpModel, cfg: EncodingConfig,
                   frozen=None, on_epoch=None):
    """The same loop with every discriminator step removed."""
    model = model.copy()
    model, _, report = _train(split, model, cfg, None, None, None, frozen, on_epoch)
    return model, report


def _train(split, model, cfg, key, mapping, disc, frozen, on_epoch):
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    report = EncodingReport()
    x_train, y_train = split.x_train, split.y_train
    n = len(y_train)
    if n == 0:
        raise ValueError("no client training data")
    b = cfg.batch_size
    iters_per_epoch = math.ceil(n / b)
    encoding = disc is not None and cfg.k > 0

    frozen = None if frozen is None else [np.asarray(f, dtype=bool) for f in frozen]
    model_opt = SGD(cfg.lr_model, cfg.momentum, frozen=frozen)
    if encoding:
        syn = gen_synthetic_data(key)
        sampler = _PoolSampler(split.x_m, split.x_nm, syn, cfg.synthetic_ratio, rng)
        enc_opt = SGD(cfg.lr_disc, cfg.momentum, frozen=frozen)
        disc_opt = SGD(cfg.lr_disc, cfg.momentum)
        z_client = np.concatenate([np.ones(len(split.y_m)), np.zeros(len(split.y_nm))])

    it = 0
    for epoch in range(cfg.epochs):
        if epoch in cfg.decay_epochs:
            model_opt.lr *= cfg.decay_factor
            if encoding:
                enc_opt.lr *= cfg.decay_factor
                disc_opt.lr *= cfg.decay_factor
        order = rng.permutation(n)
        for i in range(iters_per_epoch):
            it += 1
            if encoding:
                for _ in range(cfg.k):
                    xb, zb = sampler.sample(b)
                    loss = encoder_step(model, disc, mapping, xb, zb, enc_opt, disc_opt)
                    if not math.isfinite(loss):
                        raise TrainingError(f"encoding loss diverged at iteration {it}")
            idx = order[i * b:(i + 1) * b]
            grads = backprop(model, x_train[idx], y_train[idx])
            if not np.all(np.isfinite(grads.grads[-1])):
                raise TrainingError(f"classifier gradient diverged at iteration {it}")
            model_opt.step(model, grads)

        report.ce_member.append(_ce_or_nan(model, split.x_m, split.y_m))
        report.ce_nonmember.append(_ce_or_nan(model, split.x_nm, split.y_nm))
        report.ce_test.append(_ce_or_nan(model, split.x_test, split.y_test))
        if encoding:
            h = represent(model, mapping, x_train)
            report.enc_loss.append(encoding_loss(disc.prob(h), z_client))
        if not all(math.isfinite(v) for v in (report.ce_member[-1], report.ce_nonmember[-1])
                   if not math.isnan(v)) or not model.is_finite():
            raise TrainingError(f"training diverged in epoch {epoch + 1} (iteration {it})")
        log.debug("epoch %d: ce_test=%.4f enc=%s", epoch + 1, report.ce_test[-1],
                  report.enc_loss[-1] if encoding else "-")
        if on_epoch is not None:
            on_epoch(epoch + 1, model)

    if len(split.y_test):
        report.test_accuracy = accuracy(model, split.x_test, split.y_test)
    report.elapsed = time.perf_counter() - t0
    return model, disc, report
