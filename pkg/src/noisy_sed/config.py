"""Experiment configuration: one YAML file per run, parsed strictly.

Schema (every section optional, unknown keys rejected)::

    seed: 0
    paths: {data_root, cache_dir, checkpoint_dir, report_dir}   # relative to the file
    scene: SceneSpec fields
    features: FeatureConfig fields
    model: ModelConfig fields
    augment: AugmentConfig fields
    train: TrainConfig fields
    eval: {threshold, median_len, n_thresholds}

The top-level ``seed`` drives training and augmentation randomness; the
scene keeps its own seed because it names a dataset, not a run.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .augment import AugmentConfig
from .datagen import SceneSpec
from .features import FeatureConfig
from .rcrnn import ModelConfig, output_frames
from .training import TrainConfig

CACHE_ENV = "NOISY_SED_CACHE"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    data_root: str = "data"
    cache_dir: str = "cache"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    median_len: int = 7
    n_thresholds: int = 50

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("eval threshold must lie in (0, 1)")
        if self.median_len < 1 or self.median_len % 2 == 0:
            raise ValueError("median_len must be odd and positive")
        if self.n_thresholds < 2:
            raise ValueError("n_thresholds must be >= 2")


SECTIONS = {
    "paths": PathsConfig,
    "scene": SceneSpec,
    "features": FeatureConfig,
    "model": ModelConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: str = "."

    def __post_init__(self):
        if self.model.n_mels != self.features.n_mels:
            raise ConfigError(f"model.n_mels={self.model.n_mels} but features.n_mels={self.features.n_mels}")
        if self.model.n_frames != self.features.n_frames:
            raise ConfigError(f"model.n_frames={self.model.n_frames} but features yield "
                              f"{self.features.n_frames} frames")
        if self.model.n_classes != self.scene.n_classes:
            raise ConfigError(f"model.n_classes={self.model.n_classes} but scene.n_classes={self.scene.n_classes}")
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        object.__setattr__(self, "augment", replace(self.augment, seed=self.seed))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def path(self, name: str) -> Path:
        value = getattr(self.paths, name)
        if name == "cache_dir" and os.environ.get(CACHE_ENV):
            value = os.environ[CACHE_ENV]
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_frames(self) -> int:
        return output_frames(self.model)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else _plain(dataclasses.asdict(section))
        return out


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: Optional[dict], base_dir: str | Path = ".") -> RunConfig:
    raw = dict(raw or {})
    allowed = {"seed", *SECTIONS}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    sections = {name: _build(cls, raw.get(name), name) for name, cls in SECTIONS.items()}
    try:
        return RunConfig(seed=seed, base_dir=str(base_dir), **sections)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, path.parent)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def desk_config(base_dir: str | Path = ".", seed: int = 0, **overrides) -> RunConfig:
    """Reduced-size preset that trains the full pipeline on one CPU in minutes.

    Three well-separated classes at high SNR, 32 mel bands and narrow layers.
    With only a few hundred optimizer steps available the schedule is
    compressed: smaller batches, a short ramp-up to a higher peak rate, a
    faster teacher average and light dropout. The network topology and all
    loss and pseudo-labeling rules are unchanged.
    """
    raw = {
        "seed": seed,
        "scene": {"n_strong": 60, "n_weak": 60, "n_unlabeled": 120, "n_validation": 40, "n_classes": 3,
                  "snr_db": [15.0, 25.0], "events_per_clip": [1, 3], "seed": 0},
        "features": {"n_mels": 32},
        "model": {"n_mels": 32, "n_classes": 3, "stem_channels": [4, 8], "res_channels": [8, 16, 16, 16, 16, 16],
                  "gru_hidden": 16, "cbam_reduction": 4, "dropout": 0.1},
        "augment": {"freq_mask_max": 4, "shift_std_freq": 1.0},
        "train": {"max_lr": 0.003, "rampup_epochs": 5, "ema_decay": 0.99, "mt_epochs": 30, "ns_epochs": 12,
                  "batch_strong": 3, "batch_weak": 3, "batch_unlabeled": 6, "plateau_patience": 4,
                  "betas": [0.5], "beta": 0.5},
    }
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        if name:
            raw.setdefault(section, {})[name] = value
        else:
            raw[section] = value
    return config_from_dict(raw, base_dir)
