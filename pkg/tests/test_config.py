import json

import pytest

from sounddiff.config import ConfigError, DEFAULTS, load_config, read_sidecar_config, write_sidecar


def test_defaults_validate():
    cfg = load_config()
    assert cfg == dict(DEFAULTS) or cfg["model.dim"] == DEFAULTS["model.dim"]


def test_precedence_cli_over_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"model.dim": 32, "trainer.lr": 0.5e-3}))
    cfg = load_config(f, {"model.dim": "16"})
    assert cfg["model.dim"] == 16
    assert cfg["trainer.lr"] == 0.5e-3


def test_type_coercion_from_strings():
    cfg = load_config(None, {"trainer.lr": "1e-3", "trainer.steps": "50"})
    assert cfg["trainer.lr"] == 1e-3 and cfg["trainer.steps"] == 50


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"model.depth": 3})


def test_bad_type_rejected():
    with pytest.raises(ConfigError):
        load_config(None, {"trainer.steps": "3.5"})


def test_validation_cross_field():
    with pytest.raises(ConfigError):
        load_config(None, {"sampler.steps": 2000})  # above schedule.steps
    with pytest.raises(ConfigError):
        load_config(None, {"model.dim": 30, "model.heads": 4})


def test_sidecar_round_trip(tmp_path):
    cfg = load_config(None, {"model.dim": 16, "model.heads": 2})
    path = write_sidecar(tmp_path, cfg, "train")
    back = read_sidecar_config(path)
    assert back == cfg
    # the sidecar also works directly as a config file
    again = load_config(path)
    assert again == cfg
