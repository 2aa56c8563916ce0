"""Experiment configuration, loadable from JSON.

Nothing here comes from measured optima; optimizer settings, sizes and epoch
counts are desk-scale defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

REP_ONLY = "rep"
REP_PLUS_CE = "rep+ce"
REGIMES = (REP_ONLY, REP_PLUS_CE)


@dataclass
class FeatureConfig:
    audio_dim: int = 32
    visual_dim: int = 64
    extractor_seed: int = 0


@dataclass
class ModelConfig:
    hidden: int = 64
    layers: int = 2
    dropout: float = 0.5
    seed: int = 0


@dataclass
class TrainConfig:
    epochs: int = 150
    adapter_epochs: int = 150
    batch_size: int = 8
    lr: float = 3e-3
    lambda_rep: float = 1.0
    seed: int = 0
    max_len: int = 20
    split_seed: int = 0
    train_fraction: float = 0.8
    min_freq: int = 1


@dataclass
class DatasetConfig:
    manifest: str | None = None
    toy_seed: int = 7
    toy_videos: int = 40


@dataclass
class BenchConfig:
    repeats: int = 5
    n_videos: int | None = None
    warmup: int = 2
    seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    rates: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    regimes: list[str] = field(default_factory=lambda: list(REGIMES))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        sections = {"dataset": DatasetConfig, "features": FeatureConfig, "model": ModelConfig, "train": TrainConfig, "bench": BenchConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            kwargs[name] = _section(sections[name], value) if name in sections else value
        cfg = cls(**kwargs)
        for r in cfg.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}; expected one of {REGIMES}")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _section(kind, value: dict):
    known = {f.name for f in fields(kind)}
    unknown = set(value) - known
    if unknown:
        raise ValueError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**value)
