"""Plain-text key=value run configuration.

Keys are prefixed by section: ``scene.``, ``dtof.``, ``model.``, ``train.``,
``data.``. Every field of the corresponding config dataclass is settable;
unknown keys or sections are errors. Lines starting with '#' and blank
lines are ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .dtof import DToFConfig
from .net import ModelConfig
from .scene import SceneConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass
class DataConfig:
    """Corpus-level settings for gen-data and evaluation."""

    num_scenes: int = 4


@dataclass
class RunConfig:
    scene: SceneConfig
    dtof: DToFConfig
    model: ModelConfig
    train: TrainConfig
    data: DataConfig

    @staticmethod
    def defaults() -> "RunConfig":
        return RunConfig(SceneConfig(), DToFConfig(), ModelConfig(), TrainConfig(), DataConfig())


def _coerce(raw: str, typ, key: str):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
    if typ is float:
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
    return raw


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig.defaults()
    sections = {
        "scene": cfg.scene,
        "dtof": cfg.dtof,
        "model": cfg.model,
        "train": cfg.train,
        "data": cfg.data,
    }
    fields = {
        name: {f.name: f.type for f in dataclasses.fields(obj)}
        for name, obj in sections.items()
    }
    type_map = {"int": int, "float": float, "bool": bool, "str": str}
    pending = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section, _, name = key.partition(".")
        if section not in sections:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        if name not in fields[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        typ = fields[section][name]
        if isinstance(typ, str):
            typ = type_map.get(typ, str)
        pending.append((section, name, _coerce(raw, typ, key)))
    # apply all at once, then re-validate each dataclass's invariants
    for section, name, value in pending:
        setattr(sections[section], name, value)
    for obj in sections.values():
        if hasattr(obj, "__post_init__"):
            try:
                obj.__post_init__()
            except ValueError as e:
                raise ConfigError(str(e)) from e
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig back into the key=value format."""
    lines = []
    for section in ("scene", "dtof", "model", "train", "data"):
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name}={getattr(obj, f.name)}")
    return "\n".join(lines) + "\n"
