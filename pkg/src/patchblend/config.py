"""Flat key-value config files mirroring the training configuration."""

from __future__ import annotations

from .training import ConfigurationError, TrainConfig


def parse_config_file(path) -> dict:
    """Read `key = value` lines; blank lines and #-comments are ignored."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value, got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in TrainConfig.__dataclass_fields__:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    return values


def build_config(file_path=None, overrides=None) -> TrainConfig:
    """Config file values first, then CLI overrides on top."""
    values = {}
    if file_path:
        values.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if key not in TrainConfig.__dataclass_fields__:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = value
    return TrainConfig.from_dict(values)


def write_config_file(cfg: TrainConfig, path) -> None:
    with open(path, "w") as f:
        for key, value in cfg.to_dict().items():
            f.write(f"{key} = {value}\n")
