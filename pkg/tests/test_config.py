import json
from pathlib import Path

import pytest

from src.msggan.arch_spec import CombineKind
from src.msggan.config import DEVICE_ENV, ExperimentConfig, load_config, write_config
from src.msggan.errors import ConfigError


def _write(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


def test_defaults_resolve():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.lr == 0.003
    assert cfg.batch_size == 16
    assert cfg.architecture().combine_kind is CombineKind.SIMPLE


def test_repo_config_loads():
    cfg = load_config(Path(__file__).resolve().parents[1] / "appconfig.json")
    assert cfg.final_resolution == 32
    assert cfg.dataset_kind == "synthetic"


def test_unknown_key_names_the_key(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(_write(tmp_path, {"combine_knd": "simple"}))
    assert e.value.field == "combine_knd"


def test_bad_combine_kind_names_the_field(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(_write(tmp_path, {"combine_kind": "concat"}))
    assert e.value.field == "combine_kind"
    assert "combine_kind" in str(e.value)


@pytest.mark.parametrize("key,value", [
    ("batch_size", 0),
    ("batch_size", 2.5),
    ("lr", "fast"),
    ("budget", -1),
    ("equalized_lr", "yes"),
    ("gen_ema_beta", 1.0),
    ("channel_cap", 1),
])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({key: value})
    assert e.value.field == key


def test_architecture_checked_on_load(tmp_path):
    with pytest.raises(ConfigError) as e:
        load_config(_write(tmp_path, {"final_resolution": 32, "connection_mode": "fine"}))
    assert e.value.field == "connection_mode"
    with pytest.raises(ConfigError) as e:
        load_config(_write(tmp_path, {"final_resolution": 24}))
    assert e.value.field == "final_resolution"


def test_dataset_root_required_for_files():
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({"dataset_kind": "image_folder"})
    assert e.value.field == "dataset_root"


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(DEVICE_ENV, "cpu")
    cfg = load_config(_write(tmp_path, {"seed": 1}), seed=9, output_dir="elsewhere")
    assert cfg.seed == 9
    assert cfg.output_dir == "elsewhere"
    assert cfg.device == "cpu"
    assert cfg.torch_device().type == "cpu"


def test_written_copy_reloads_identically(tmp_path, monkeypatch):
    monkeypatch.delenv(DEVICE_ENV, raising=False)
    cfg = ExperimentConfig.from_dict({"lr": 0.01, "seed": 3})
    path = write_config(cfg, tmp_path / "out")
    again = load_config(path)
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    assert cfg.replace(lr=0.001).config_hash() != cfg.config_hash()
