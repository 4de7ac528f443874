import json

import pytest

from syncasd.config import ConfigError, RunConfig, read_config_file
from syncasd.synthgen import SynthConfig
from syncasd.training import TrainConfig


def test_read_toml_and_json(tmp_path):
    (tmp_path / "a.toml").write_text('seed = 4\nhead = "rothnet"\n')
    (tmp_path / "a.json").write_text(json.dumps({"seed": 4, "head": "rothnet"}))
    assert read_config_file(tmp_path / "a.toml") == read_config_file(tmp_path / "a.json") == {"seed": 4, "head": "rothnet"}


@pytest.mark.parametrize("name, text", [("bad.toml", "seed = = 1"), ("bad.json", "{"), ("list.json", "[1, 2]")])
def test_malformed_files(tmp_path, name, text):
    (tmp_path / name).write_text(text)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / name)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        read_config_file(tmp_path / "nope.toml")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="dropout"):
        RunConfig.from_dict({"dropout": 0.1})


def test_overrides_beat_file_and_none_is_ignored(tmp_path):
    (tmp_path / "c.toml").write_text("seed = 4\nepochs = 9\n")
    cfg = RunConfig.load(tmp_path / "c.toml", {"seed": 7, "epochs": None})
    assert (cfg.seed, cfg.epochs) == (7, 9)


def test_sub_configs_are_valid():
    cfg = RunConfig(T_min=14, epochs=2, pe_self=False)
    assert SynthConfig.from_dict(cfg.synth_dict()).T_min == 14
    assert TrainConfig.from_dict(cfg.train_dict()).pe_self is False
    assert "counts" not in cfg.synth_dict()
