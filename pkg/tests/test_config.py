import json
from pathlib import Path

import pytest

from memenc.config import ConfigError, from_dict, load_config, override, parse_arch

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = from_dict({})
    assert cfg.model.arch == "mlp:128,64"
    assert cfg.mapping.layer == 2 and cfg.mapping.unit_fraction == 0.5
    assert cfg.decoder.inference_config().batch_size == 8


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="section"):
        from_dict({"bogus": {}})
    with pytest.raises(ConfigError, match="lr"):
        from_dict({"encoding": {"lr": 0.1}})
    with pytest.raises(ConfigError):
        from_dict({"encoding": {"k": -2}})


def test_file_configs_need_explicit_seeds(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"key": {"seed": 1}}))
    with pytest.raises(ConfigError, match="seeds"):
        load_config(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize("name", ["desk_whitebox.json", "desk_blackbox.json", "mnist_mlp.json"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.key.n == 500


def test_override():
    cfg = override(from_dict({}), {"encoding.k": 3, "key.seed": 9})
    assert cfg.encoding.k == 3 and cfg.key.seed == 9
    with pytest.raises(ConfigError):
        override(cfg, {"encoding.nope": 1})
    with pytest.raises(ConfigError):
        override(cfg, {"k": 1})


def test_parse_arch():
    assert parse_arch("mlp:512,128") == [512, 128]
    for bad in ("cnn:1", "mlp:", "mlp:a,b", "mlp:0"):
        with pytest.raises(ConfigError):
            parse_arch(bad)
