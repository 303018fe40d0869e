"""Run configuration: nested dataclasses loaded from YAML with dotted CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .corruption import CorruptionConfig
from .data.patches import PatchProtocol
from .fusion import FusionConfig
from .losses import LossConfig
from .metrics import BettiConfig


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3
    base_channels: int = 32
    in_channels: int = 1
    bilinear_upsampling: bool = True
    se_reduction: int = 4


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 100
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.method not in ("adam", "adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size and epochs must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    betti: BettiConfig = field(default_factory=BettiConfig)
    patch: PatchProtocol = field(default_factory=PatchProtocol)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    manifest: str | None = None
    val_fraction: float = 0.1
    out_dir: str = "runs/dtu"
    seed: int = 0
    use_triplet: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, overrides: dict[str, Any]) -> "RunConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            _set_dotted(data, key, value)
        return from_dict(RunConfig, data)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(_plain(self.to_dict()), sort_keys=False))

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return from_dict(cls, data)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise KeyError(f"unknown config section {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise KeyError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def from_dict(cls, data: dict):
    """Build a (possibly nested) frozen dataclass, rejecting unknown keys."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = from_dict(type(current), value or {})
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def parse_override(text: str) -> tuple[str, Any]:
    """``"loss.tau=0.2"`` -> ``("loss.tau", 0.2)``; values are parsed as YAML scalars."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)
