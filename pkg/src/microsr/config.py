"""Run configuration: JSON files, dotted --set overrides, resolved echo.

The schema mirrors TrainConfig and its nested dataclasses one for one.
Everything is validated up front so a bad config fails before any real
work starts, and the fully resolved config is echoed next to the outputs
in a byte-stable form (sorted keys) for later diffing.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .discriminator import DiscConfig
from .generator import ArchConfig
from .perceptual import FeatureNetSpec, LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_NESTED = {
    "arch": ArchConfig,
    "disc": DiscConfig,
    "features": FeatureNetSpec,
    "loss_weights": LossWeights,
}


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got "
                          f"{type(data).__name__}")
    allowed = _field_names(cls)
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in allowed:
            raise ConfigError(f"unknown config key {where!r}")
        nested = _NESTED.get(key) if cls is TrainConfig else None
        if nested is not None:
            kwargs[key] = _build(nested, value, where)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    # the critic's input size follows the crop unless pinned explicitly
    hr_crop = data.get("hr_crop", TrainConfig.__dataclass_fields__["hr_crop"].default)
    disc = dict(data.get("disc", {}))
    disc.setdefault("input_size", hr_crop)
    data["disc"] = disc
    return _build(TrainConfig, data, "")


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def parse_override(text: str) -> tuple[list[str], object]:
    """Split 'a.b.c=value' into a key path and a JSON-decoded value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are fine: --set foo=bar
    return key.split("."), value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    out = json.loads(json.dumps(data))  # deep copy, JSON types only
    for text in overrides:
        keys, value = parse_override(text)
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-object")
        node[keys[-1]] = value
    return out


def resolve_train_config(config_path=None, overrides=()) -> TrainConfig:
    data = load_config_file(config_path) if config_path is not None else {}
    data = apply_overrides(data, list(overrides))
    return train_config_from_dict(data)


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def resolved_config_text(cfg: TrainConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2,
                      default=list) + "\n"


def write_resolved_config(cfg: TrainConfig, out_dir) -> Path:
    out = Path(out_dir) / "resolved_config.json"
    out.write_text(resolved_config_text(cfg), encoding="utf-8")
    return out
