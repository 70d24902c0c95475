from __future__ import annotations

import json

import pytest

from scene_dialog_dmn.config import (
    MODALITIES,
    ConfigOverrides,
    TrainConfig,
    parse_overrides,
    resolve_config,
    write_config,
)
from scene_dialog_dmn.errors import ConfigurationError, ParseError, ResolutionError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("DMN_SEED", raising=False)
    monkeypatch.delenv("DEBUG_LOGS", raising=False)


def test_defaults():
    config = resolve_config()
    assert config == TrainConfig()
    assert (config.hidden, config.episodes, config.gamma, config.fusion) == (128, 2, 0.1, "literal")
    assert config.modalities == MODALITIES
    assert config.word_dim == 128


def test_layering_order(tmp_path, monkeypatch):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"hidden": 16, "seed": 1, "epochs": 3}), encoding="utf-8")
    monkeypatch.setenv("DMN_SEED", "7")
    config = resolve_config(path, ConfigOverrides({"epochs": 5}))
    assert config.hidden == 16
    assert config.seed == 7
    assert config.epochs == 5


def test_debug_logs_from_environment(monkeypatch):
    monkeypatch.setenv("DEBUG_LOGS", "true")
    assert resolve_config().debug_logs is True


def test_unknown_keys_are_named(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"hidden": 8, "dropout": 0.1, "heads": 2}), encoding="utf-8")
    with pytest.raises(ConfigurationError, match="Unknown keys in config: dropout, heads"):
        resolve_config(path)


def test_modalities_from_comma_string():
    overrides = parse_overrides({"modalities": "visual, caption"})
    assert overrides.values["modalities"] == ("visual", "caption")


@pytest.mark.parametrize(
    "payload",
    [
        {"hidden": 0},
        {"episodes": 0},
        {"gamma": -0.1},
        {"fusion": "concat"},
        {"modalities": []},
        {"modalities": ["visual", "smell"]},
        {"beta1": 1.0},
        {"val_fraction": 1.0},
        {"hidden": 2.5},
        {"epochs": True},
    ],
)
def test_invalid_values(payload):
    with pytest.raises(ConfigurationError):
        TrainConfig.from_dict(payload)


def test_zero_learning_rate_and_gamma_are_allowed():
    config = TrainConfig.from_dict({"learning_rate": 0, "gamma": 0})
    assert config.learning_rate == 0.0 and config.gamma == 0.0


def test_write_then_read(tmp_path):
    config = TrainConfig(hidden=8, modalities=("audio",), fusion="question-gated")
    write_config(tmp_path / "run" / "config.json", config)
    assert resolve_config(tmp_path / "run" / "config.json") == config


def test_missing_file(tmp_path):
    with pytest.raises(ResolutionError):
        resolve_config(tmp_path / "none.json")


def test_malformed_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{hidden: 1}", encoding="utf-8")
    with pytest.raises(ParseError):
        resolve_config(path)


def test_bad_seed_in_environment(monkeypatch):
    monkeypatch.setenv("DMN_SEED", "abc")
    with pytest.raises(ConfigurationError, match="DMN_SEED"):
        resolve_config()
