"""Declarative run configuration (JSON).

A run file has the sections below; unknown sections or keys are errors, and
when loading from a file every seed must be written out.

.. code-block:: json

    {"data": {"benchmark": {"seed": 0}},
     "model": {"arch": "mlp:128,64", "init_seed": 0},
     "key": {"seed": 12345, "n": 500},
     "mapping": {"mode": "whitebox", "layer": 2, "unit_fraction": 0.5},
     "select": {"fraction": 0.2, "seed": 0},
     "encoding": {"epochs": 80, "seed": 0, "disc_seed": 1},
     "decoder": {"seed": 0},
     "output": {"checkpoint": "model.ckpt"}}
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .decoder import InferenceConfig
from .encoder import EncodingConfig

REQUIRED_SEEDS = [("model", "init_seed"), ("key", "seed"), ("select", "seed"),
                  ("encoding", "seed"), ("encoding", "disc_seed"), ("decoder", "seed")]


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train: str | None = None
    test: str | None = None
    label_column: str = "label"
    delimiter: str = ","
    benchmark: dict | None = None  # kwargs for datasets.gen_benchmark
    idx: dict | None = None  # train_images, train_labels, test_images, test_labels
    limit_train: int | None = None


@dataclass
class ModelSection:
    arch: str = "mlp:128,64"
    init_seed: int = 0
    activation: str = "relu"


@dataclass
class KeySection:
    seed: int = 12345
    n: int = 500
    alpha: float = 0.0
    beta: float = 1.0


@dataclass
class MappingSection:
    mode: str = "whitebox"
    layer: int | None = 2
    unit_fraction: float = 0.5


@dataclass
class SelectSection:
    fraction: float = 0.2
    seed: int = 0


@dataclass
class DecoderSection:
    seed: int = 0
    hidden: int = 128
    epochs: int = 80
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 8

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(self.hidden, self.epochs, self.lr, self.momentum, self.batch_size)


@dataclass
class OutputSection:
    checkpoint: str | None = None
    report: str | None = None
    metrics: str | None = None
    key: str | None = None
    members: str | None = None


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    key: KeySection = field(default_factory=KeySection)
    mapping: MappingSection = field(default_factory=MappingSection)
    select: SelectSection = field(default_factory=SelectSection)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def from_dict(d: dict, require_seeds: bool = False) -> RunConfig:
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    if require_seeds:
        missing = [f"{s}.{k}" for s, k in REQUIRED_SEEDS if k not in d.get(s, {})]
        if missing:
            raise ConfigError(f"seeds must be explicit; missing {missing}")
    kwargs = {}
    for name, factory in _SECTIONS.items():
        section = d.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be an object")
        cls = type(factory())
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in {name!r}: {sorted(bad)}")
        try:
            kwargs[name] = cls(**section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name!r} section: {exc}") from None
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(d, require_seeds=True)


def override(cfg: RunConfig, dotted: dict) -> RunConfig:
    """Copy of ``cfg`` with ``{"section.key": value}`` overrides applied."""
    d = copy.deepcopy(cfg.to_dict())
    for path, value in dotted.items():
        section, _, key = path.partition(".")
        if section not in d or not key:
            raise ConfigError(f"bad override path {path!r}")
        if key not in d[section]:
            raise ConfigError(f"unknown key {key!r} in section {section!r}")
        d[section][key] = value
    return from_dict(d)


def parse_arch(arch: str) -> list[int]:
    """``"mlp:128,64"`` -> ``[128, 64]``."""
    kind, _, widths = arch.partition(":")
    if kind != "mlp":
        raise ConfigError(f"unsupported architecture {arch!r}; only 'mlp:<w1>,<w2>,...'")
    try:
        out = [int(w) for w in widths.split(",") if w.strip()]
    except ValueError:
        raise ConfigError(f"bad layer widths in {arch!r}") from None
    if not out or min(out) < 1:
        raise ConfigError(f"need at least one positive hidden width in {arch!r}")
    return out
