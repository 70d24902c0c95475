from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from scene_dialog_dmn.errors import ConfigurationError, ParseError, ResolutionError

MODALITIES: tuple[str, ...] = ("visual", "audio", "caption", "summary")
FUSION_MODES: tuple[str, ...] = ("literal", "question-gated")


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 128
    embed_dim: int | None = None
    episodes: int = 2
    gamma: float = 0.1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 30
    beam_width: int = 5
    max_len: int = 30
    seed: int = 0
    fusion: str = "literal"
    clip_norm: float = 5.0
    modalities: tuple[str, ...] = MODALITIES
    chain_history: bool = True
    val_fraction: float = 0.2
    min_count: int = 1
    embeddings_path: str | None = None
    train_path: str | None = None
    val_path: str | None = None
    output_dir: str = "runs/latest"
    debug_logs: bool = False

    @property
    def word_dim(self) -> int:
        return self.embed_dim if self.embed_dim is not None else self.hidden

    def validate(self) -> "TrainConfig":
        for name in ("hidden", "episodes", "batch_size", "epochs", "beam_width", "max_len", "min_count"):
            value = getattr(self, name)
            if value < 1:
                raise ConfigurationError(f"{name} must be at least 1, got {value}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be at least 1, got {self.embed_dim}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be nonnegative, got {self.gamma}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {value}")
        if self.adam_eps <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("adam_eps and clip_norm must be positive")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {self.seed}")
        if self.fusion not in FUSION_MODES:
            raise ConfigurationError(f"fusion must be one of {', '.join(FUSION_MODES)}, got {self.fusion!r}")
        if not self.modalities:
            raise ConfigurationError("modalities must name at least one of " + ", ".join(MODALITIES))
        unknown = sorted(set(self.modalities) - set(MODALITIES))
        if unknown:
            raise ConfigurationError(f"Unknown modalities: {', '.join(unknown)}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigurationError("modalities must not repeat")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        return self

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["modalities"] = list(self.modalities)
        return payload

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "TrainConfig":
        return apply_overrides(cls(), parse_overrides(payload)).validate()


UNSET = object()

CONFIG_ALLOWED_KEYS = {field.name for field in fields(TrainConfig)}

_INT_KEYS = {"hidden", "episodes", "batch_size", "epochs", "beam_width", "max_len", "seed", "min_count"}
_FLOAT_KEYS = {"gamma", "learning_rate", "beta1", "beta2", "adam_eps", "clip_norm", "val_fraction"}
_BOOL_KEYS = {"chain_history", "debug_logs"}
_OPTIONAL_STR_KEYS = {"embeddings_path", "train_path", "val_path"}


@dataclass(frozen=True)
class ConfigOverrides:
    """Only fields that were actually given; everything else stays UNSET."""

    values: dict[str, Any]

    def merged(self, other: "ConfigOverrides") -> "ConfigOverrides":
        combined = dict(self.values)
        combined.update(other.values)
        return ConfigOverrides(combined)


def _env_optional(name: str) -> str | None:
    return os.getenv(name)


def _env_int(name: str, default: int | object) -> int | object:
    value = _env_optional(name)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigurationError(f"{name} must be an integer, got {value!r}") from exc


def _env_bool(name: str, default: bool | object) -> bool | object:
    value = _env_optional(name)
    if value is None or value == "":
        return default
    return value.lower() in {"1", "true", "yes", "on"}


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be an integer, got {value!r}")
    try:
        number = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key} must be an integer, got {value!r}") from exc
    if isinstance(value, float) and number != value:
        raise ConfigurationError(f"{key} must be an integer, got {value!r}")
    return number


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ConfigurationError(f"{key} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key} must be a number, got {value!r}") from exc


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.lower() in {"1", "true", "yes", "on"}
    return bool(value)


def _as_optional_str(value: Any) -> str | None:
    if value is None:
        return None
    return value if isinstance(value, str) else str(value)


def _as_modalities(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    if isinstance(value, (list, tuple)):
        return tuple(str(part) for part in value)
    raise ConfigurationError(f"modalities must be a list or comma-separated string, got {value!r}")


def _coerce(key: str, value: Any) -> Any:
    if key in _INT_KEYS:
        return _as_int(key, value)
    if key in _FLOAT_KEYS:
        return _as_float(key, value)
    if key in _BOOL_KEYS:
        return _as_bool(value)
    if key in _OPTIONAL_STR_KEYS:
        return _as_optional_str(value)
    if key == "embed_dim":
        return None if value is None else _as_int(key, value)
    if key == "modalities":
        return _as_modalities(value)
    return str(value)


def parse_overrides(payload: dict[str, Any]) -> ConfigOverrides:
    unknown_keys = sorted(set(payload) - CONFIG_ALLOWED_KEYS)
    if unknown_keys:
        raise ConfigurationError(f"Unknown keys in config: {', '.join(unknown_keys)}")
    return ConfigOverrides(
        {key: _coerce(key, value) for key, value in payload.items() if value is not UNSET}
    )


def load_config_file(path: str | Path) -> ConfigOverrides:
    source = Path(path)
    if not source.is_file():
        raise ResolutionError(str(source), "config file")
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{source} must contain a JSON object")
    return parse_overrides(payload)


def env_overrides() -> ConfigOverrides:
    values: dict[str, Any] = {}
    seed = _env_int("DMN_SEED", UNSET)
    if seed is not UNSET:
        values["seed"] = seed
    debug_logs = _env_bool("DEBUG_LOGS", UNSET)
    if debug_logs is not UNSET:
        values["debug_logs"] = debug_logs
    return ConfigOverrides(values)


def apply_overrides(base: TrainConfig, overrides: ConfigOverrides | None) -> TrainConfig:
    if not overrides or not overrides.values:
        return base
    return replace(base, **overrides.values)


def resolve_config(
    config_path: str | Path | None = None,
    cli_overrides: ConfigOverrides | None = None,
) -> TrainConfig:
    """Defaults, then the JSON file, then the environment, then explicit CLI flags."""
    layered = ConfigOverrides({})
    if config_path:
        layered = layered.merged(load_config_file(config_path))
    layered = layered.merged(env_overrides())
    if cli_overrides is not None:
        layered = layered.merged(cli_overrides)
    return apply_overrides(TrainConfig(), layered).validate()


def write_config(path: str | Path, config: TrainConfig) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
