"""Flat ``key = value`` config files with [preprocess], [model], [train] and [sweep] sections."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig, ModelKind
from .train import TrainConfig

SECTIONS = ("preprocess", "model", "train", "sweep")
SWEEP_KEYS = ("kinds", "d_ff", "n_heads", "dropout")


class ConfigFileError(ValueError):
    pass


@dataclass
class PreprocessConfig:
    vocab_size: int = 200_000
    max_len: int = 100
    retained: str = "。！？；，….!?;,"
    seed: int = 0


@dataclass
class SweepSpec:
    kinds: list = field(default_factory=list)
    d_ff: list = field(default_factory=list)
    n_heads: list = field(default_factory=list)
    dropout: list = field(default_factory=list)


def _coerce(value: str, like, key: str):
    value = value.strip()
    try:
        if isinstance(like, bool):
            lowered = value.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, ModelKind):
            return ModelKind.parse(value)
        if isinstance(like, int):
            return int(value.replace("_", ""))
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {value!r} as {type(like).__name__}") from None
    return value


def _section_to(cls, items: dict[str, str], section: str):
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(items) - names)
    if unknown:
        raise ConfigFileError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(v, getattr(defaults, k), f"{section}.{k}") for k, v in items.items()})


@dataclass
class ConfigFile:
    preprocess: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def read(cls, path) -> "ConfigFile":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as err:
            raise ConfigFileError(f"{path}: {err}") from None
        extra = sorted(set(parser.sections()) - set(SECTIONS))
        if extra:
            raise ConfigFileError(f"{path}: unknown section(s): {', '.join(extra)}")
        out = cls()
        for name in parser.sections():
            setattr(out, name, dict(parser.items(name)))
        return out

    def preprocess_config(self) -> PreprocessConfig:
        return _section_to(PreprocessConfig, self.preprocess, "preprocess")

    def model_config(self) -> ModelConfig:
        return _section_to(ModelConfig, self.model, "model")

    def train_config(self) -> TrainConfig:
        return _section_to(TrainConfig, self.train, "train")

    def sweep_spec(self) -> SweepSpec:
        unknown = sorted(set(self.sweep) - set(SWEEP_KEYS))
        if unknown:
            raise ConfigFileError(f"unknown key(s) in [sweep]: {', '.join(unknown)}")
        probe = ModelConfig()
        spec = SweepSpec()
        for key, raw in self.sweep.items():
            like = probe.kind if key == "kinds" else getattr(probe, key)
            values = [_coerce(v, like, f"sweep.{key}") for v in raw.split(",") if v.strip()]
            setattr(spec, key, values)
        return spec


def render_resolved(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Every setting written out explicitly, in the same format the reader accepts."""
    lines = ["[model]"]
    for key, value in model_cfg.to_dict().items():
        lines.append(f"{key} = {value}")
    lines += ["", "[train]"]
    for f in fields(train_cfg):
        lines.append(f"{f.name} = {getattr(train_cfg, f.name)}")
    return "\n".join(lines) + "\n"
