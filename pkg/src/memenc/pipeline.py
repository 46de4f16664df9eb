"""Glue between a RunConfig and the library: data loading, key/model
construction, end-to-end encode and evaluation, and small file writers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import datasets
from .checkpoint import key_fingerprint, save_checkpoint
from .config import RunConfig, parse_arch
from .decoder import BlackboxOracle, WhiteboxOracle, reconstruct_discriminator
from .encoder import (
    Discriminator,
    EncodingReport,
    SplitDataset,
    membership_encoding,
    select_members,
    train_baseline,
)
from .metrics import ScoreSet, auc, precision_recall
from .nn import MlpModel, accuracy, init_mlp
from .syndata import EncodingKey

METRIC_COLUMNS = ["test_acc", "enc_precision", "enc_recall", "enc_auc"]


def load_data(cfg: RunConfig):
    """Returns ``((x_train, y_train), (x_test, y_test), n_classes)``."""
    d = cfg.data
    sources = [d.benchmark is not None, d.idx is not None, d.train is not None]
    if sum(sources) != 1:
        raise ValueError("data section needs exactly one of benchmark, idx, train")
    if d.benchmark is not None:
        train, test = datasets.gen_benchmark(**d.benchmark)
    elif d.idx is not None:
        train = datasets.load_idx_images(d.idx["train_images"], d.idx["train_labels"])
        test = datasets.load_idx_images(d.idx["test_images"], d.idx["test_labels"])
    else:
        train = datasets.load_csv_dataset(d.train, d.label_column, d.delimiter)
        if d.test is None:
            raise ValueError("data.test is required with data.train")
        test = datasets.load_csv_dataset(d.test, d.label_column, d.delimiter)
    if d.limit_train is not None:
        train = (train[0][:d.limit_train], train[1][:d.limit_train])
    n_classes = int(max(train[1].max(), test[1].max())) + 1
    return train, test, n_classes


def make_key(cfg: RunConfig, q: int) -> EncodingKey:
    m = cfg.mapping
    return EncodingKey(cfg.key.seed, cfg.key.n, q, cfg.key.alpha, cfg.key.beta,
                       mapping={"mode": m.mode, "layer": m.layer,
                                "unit_fraction": m.unit_fraction})


def make_model(cfg: RunConfig, q: int, n_classes: int) -> MlpModel:
    sizes = [q] + parse_arch(cfg.model.arch) + [n_classes]
    return init_mlp(sizes, cfg.model.init_seed, hidden_activation=cfg.model.activation)


def make_split(cfg: RunConfig, train, test, n_classes) -> SplitDataset:
    return select_members(train[0], train[1], cfg.select.fraction, cfg.select.seed,
                          test=test, n_classes=n_classes)


def oracle_for(model: MlpModel, key: EncodingKey):
    if (key.mapping or {}).get("mode", "whitebox") == "blackbox":
        return BlackboxOracle.from_model(model)
    return WhiteboxOracle.from_key(model, key)


def membership_metrics(d: Discriminator, oracle, members, nonmembers, threshold=0.5) -> dict:
    s = ScoreSet.from_pools(d.prob(oracle(members)), d.prob(oracle(nonmembers)))
    p, r = precision_recall(s, threshold)
    return {"enc_precision": p, "enc_recall": r, "enc_auc": auc(s)}


def evaluate(model: MlpModel, key: EncodingKey, split: SplitDataset, cfg: RunConfig,
             oracle=None) -> dict:
    """Table-style row: test accuracy plus decode precision/recall/AUC of
    encoded members against the hold-out test set."""
    oracle = oracle or oracle_for(model, key)
    d = reconstruct_discriminator(oracle, key, cfg.decoder.seed, cfg.decoder.inference_config())
    row = {"test_acc": accuracy(model, split.x_test, split.y_test)}
    row.update(membership_metrics(d, oracle, split.x_m, split.x_test))
    return row


@dataclass
class RunResult:
    model: MlpModel
    report: EncodingReport
    split: SplitDataset
    key: EncodingKey
    metrics: dict
    discriminator: Discriminator | None = None


def run_encode(cfg: RunConfig, baseline: bool = False, evaluate_model: bool = True) -> RunResult:
    train, test, n_classes = load_data(cfg)
    q = train[0].shape[1]
    key = make_key(cfg, q)
    split = make_split(cfg, train, test, n_classes)
    model0 = make_model(cfg, q, n_classes)
    if baseline:
        model, report = train_baseline(split, model0, cfg.encoding)
        disc = None
    else:
        model, disc, report = membership_encoding(split, key, model0, cfg.encoding)
    metrics = evaluate(model, key, split, cfg) if evaluate_model else {}
    return RunResult(model, report, split, key, metrics, disc)


def checkpoint_meta(cfg: RunConfig, key: EncodingKey | None, kind: str) -> dict:
    meta = {"kind": kind, "config": {k: v for k, v in cfg.to_dict().items()
                                     if k not in ("key", "output")}}
    if key is not None:
        meta["key_fingerprint"] = key_fingerprint(key.seed)
    return meta


def save_run(result: RunResult, cfg: RunConfig, kind: str = "encoded") -> str | None:
    out = cfg.output
    digest = None
    if out.checkpoint:
        digest = save_checkpoint(result.model, out.checkpoint, checkpoint_meta(cfg, result.key, kind))
    if out.report:
        write_rows(out.report, result.report.rows())
    if out.metrics and result.metrics:
        write_rows(out.metrics, [result.metrics])
    if out.key:
        save_key(result.key, out.key)
    if out.members:
        save_members(result.split, out.members)
    return digest


def save_key(key: EncodingKey, path):
    with datasets.atomic_write(path, "w") as fh:
        json.dump({"seed": key.seed, "n": key.n, "q": key.q, "alpha": key.alpha,
                   "beta": key.beta, "mapping": key.mapping}, fh, indent=2, sort_keys=True)


def load_key(path) -> EncodingKey:
    with open(path) as fh:
        d = json.load(fh)
    return EncodingKey(d["seed"], d["n"], d["q"], d["alpha"], d["beta"], d.get("mapping", {}))


def save_members(split: SplitDataset, path):
    with datasets.atomic_write(path, "w") as fh:
        json.dump({"member_index": [int(i) for i in split.member_index]}, fh)


def load_members(path) -> np.ndarray:
    with open(path) as fh:
        return np.asarray(json.load(fh)["member_index"], dtype=np.int64)


def split_from_members(train, test, member_index, n_classes) -> SplitDataset:
    x, y = train
    is_m = np.zeros(len(y), dtype=bool)
    is_m[member_index] = True
    return SplitDataset(x[is_m], y[is_m], x[~is_m], y[~is_m], test[0], test[1], n_classes,
                        member_index=np.asarray(member_index))


def write_rows(path, rows: list[dict]):
    """CSV, or JSON when the path ends in ``.json``."""
    if str(path).endswith(".json"):
        with datasets.atomic_write(path, "w") as fh:
            json.dump(rows if len(rows) != 1 else rows[0], fh, indent=2)
            fh.write("\n")
        return
    columns = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    with datasets.atomic_write(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return json.dumps(v)
    return v
