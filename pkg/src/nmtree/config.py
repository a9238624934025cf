"""Run configuration.  Defaults carry the published settings where they exist
(lr 1e-3 decayed by 0.9 every 10 epochs, tau 1.0, embeddings 300/50/50) and
desk-scale values elsewhere (d_h 64, attention hidden 64, batch 32)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # optimisation
    lr: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 10
    epochs: int = 40
    batch_size: int = 32
    tau: float = 1.0
    seed: int = 0
    precision: int = 64
    min_count: int = 2
    early_stop_patience: int = 0  # 0 disables

    # model sizes
    d_x: int = 16
    d_h: int = 64
    embed_word: int = 300
    embed_pos: int = 50
    embed_dep: int = 50
    attn_hidden: int = 64

    # synthetic task
    categories: list[str] = field(default_factory=lambda: ["ball", "box", "cup", "car", "dog"])
    colors: list[str] = field(default_factory=lambda: ["red", "blue", "green", "yellow"])
    sizes: list[str] = field(default_factory=lambda: ["small", "large"])
    num_regions: int = 8
    max_depth: int = 2
    feature_noise: float = 0.01
    determiners: bool = False

    # paths (used by the CLI)
    data: str = ""
    val: str = ""
    out: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def embed_dim(self) -> int:
        return self.embed_word + self.embed_pos + self.embed_dep

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch`` under the step decay schedule."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every)

    def validate(self) -> None:
        positive = ["lr", "decay_every", "epochs", "batch_size", "tau", "d_x", "d_h",
                    "embed_word", "embed_pos", "embed_dep", "attn_hidden", "num_regions",
                    "min_count"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.max_depth not in (1, 2, 3):
            raise ConfigError(f"max_depth must be 1, 2 or 3, got {self.max_depth}")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> Config:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> Config:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def replace(self, **changes) -> Config:
        return self.from_dict({**self.to_dict(), **changes})
