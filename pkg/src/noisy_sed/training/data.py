"""Training records, the training configuration and mini-batch scheduling."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..evaluation.events import DetectionEvent
from .losses import PSEUDO, STRONG, UNLABELED, WEAK

KINDS = (STRONG, WEAK, UNLABELED, PSEUDO)


@dataclass
class ClipRecord:
    """One training clip: normalized ``(frames, mels)`` features plus whatever labels it has.

    ``strong_label`` is a ``(T_out, K)`` binary grid, ``weak_label`` a ``(K,)``
    binary vector. ``events`` optionally keeps the exact reference events of
    a strongly labeled clip for event-level scoring.
    """

    clip_id: str
    features: np.ndarray
    kind: str
    strong_label: Optional[np.ndarray] = None
    weak_label: Optional[np.ndarray] = None
    events: Optional[list[DetectionEvent]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.clip_id}: unknown label kind {self.kind!r}")
        if self.kind in (STRONG, PSEUDO) and self.strong_label is None:
            raise ValueError(f"{self.clip_id}: {self.kind} clip needs a strong label")
        if self.kind == WEAK and self.weak_label is None:
            raise ValueError(f"{self.clip_id}: weak clip needs a weak label")
        if self.kind == UNLABELED and (self.strong_label is not None or self.weak_label is not None):
            raise ValueError(f"{self.clip_id}: unlabeled clip carries labels")


@dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 1e-3
    rampup_epochs: int = 50
    ema_decay: float = 0.999
    consistency_weight_max: float = 2.0
    batch_strong: int = 6
    batch_weak: int = 6
    batch_unlabeled: int = 12
    mt_epochs: int = 100
    ns_epochs: int = 50
    beta: float = 0.5
    betas: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    threshold: float = 0.5
    folds: int = 5
    rounds: int = 2
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_min_delta: float = 1e-4
    min_lr: float = 1e-5
    median_len: int = 7
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for b in (self.beta, *self.betas):
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"beta must lie in [0, 1], got {b}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if min(self.batch_strong, self.batch_weak, self.batch_unlabeled) < 0:
            raise ValueError("batch sizes must be >= 0")
        if self.max_lr <= 0 or self.min_lr < 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def plan_epoch(pools: Sequence[Sequence[int]], sizes: Sequence[int], rng: np.random.Generator) -> list[list[int]]:
    """Shuffle each pool and cut it into batches of its size.

    The epoch lasts as many batches as the slowest pool needs to be seen
    once; shorter pools wrap around their own permutation. Empty pools or
    zero sizes contribute nothing.
    """
    active = [(np.asarray(p), s) for p, s in zip(pools, sizes) if len(p) and s > 0]
    if not active:
        raise ValueError("no clips to train on")
    perms = [p[rng.permutation(len(p))] for p, _ in active]
    n_batches = max(math.ceil(len(p) / s) for p, s in active)
    out = []
    for b in range(n_batches):
        batch = []
        for perm, (_, s) in zip(perms, active):
            batch.extend(int(perm[(b * s + j) % len(perm)]) for j in range(s))
        out.append(batch)
    return out
