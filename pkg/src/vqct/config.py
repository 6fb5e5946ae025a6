"""Flat ``key=value`` configuration shared by training and the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

VARIANTS = ("baseline", "vqct")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    variant: str = "vqct"
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    max_grad_norm: float = 0.0
    beta: float = 0.25
    n_c: int = 32
    k: int = 64
    k_adj: int = 32
    k_noun: int = 32
    image_size: int = 32
    downsample: int = 4
    base_width: int = 16
    # "synthetic" or a directory of .ppm images
    dataset: str = "synthetic"
    n_images: int = 256
    data_seed: int = 0
    # empty paths fall back to generated synthetic word resources
    embeddings: str = ""
    lexicon: str = ""
    corpus: str = ""
    edges: str = ""
    prior_seed: int = 0
    d_plm: int = 16
    d_hidden: int = 0
    final_activation: str = "relu"
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        positive = ["epochs", "batch_size", "n_c", "k", "k_adj", "k_noun", "image_size",
                    "base_width", "n_images", "d_plm"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.beta < 0:
            raise ConfigError(f"beta must be non-negative, got {self.beta}")
        if self.max_grad_norm < 0 or self.d_hidden < 0 or self.checkpoint_every < 0:
            raise ConfigError("max_grad_norm, d_hidden and checkpoint_every must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.downsample not in (2, 4):
            raise ConfigError(f"downsample must be 2 or 4, got {self.downsample}")
        if self.image_size % self.downsample:
            raise ConfigError(f"image_size {self.image_size} not divisible by {self.downsample}")
        if self.variant == "vqct" and self.n_c % 2:
            raise ConfigError(f"vqct needs an even n_c, got {self.n_c}")
        if self.final_activation not in ("relu", "none"):
            raise ConfigError(f"final_activation must be relu or none, got {self.final_activation!r}")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name: str, kind, raw: str):
    kind_name = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind_name == "int":
            return int(raw)
        if kind_name == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind_name}, got {raw!r}") from None
    return raw


def parse_overrides(pairs: "dict[str, str]", base: TrainConfig | None = None) -> TrainConfig:
    cfg = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, types[key], str(raw).strip())
    return cfg.replace(**changes)


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return parse_overrides(pairs, base)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)
