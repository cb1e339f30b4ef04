"""Averaging ensembles and candidate selection over the fold x beta grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..rcrnn import StrongPrediction


def ensemble_combine(predictions: Sequence[StrongPrediction]) -> StrongPrediction:
    """Elementwise mean of strong and weak probabilities.

    Uses the running mean ``m += (p - m) / (i + 1)`` so that averaging
    copies of one prediction returns it bit-exactly.
    """
    if not predictions:
        raise ValueError("ensemble needs at least one model")
    first = predictions[0]
    strong = np.array(first.strong, dtype=np.float64)
    weak = np.array(first.weak, dtype=np.float64)
    for i, p in enumerate(predictions[1:], start=1):
        if p.strong.shape != strong.shape or p.weak.shape != weak.shape:
            raise ValueError(f"model {i} output shapes {p.strong.shape}/{p.weak.shape} differ from "
                             f"{strong.shape}/{weak.shape}")
        strong += (p.strong - strong) / (i + 1)
        weak += (p.weak - weak) / (i + 1)
    return StrongPrediction(strong, weak)


@dataclass(frozen=True)
class Candidate:
    """One trained model: its fold, position in the beta grid and validation F1."""

    fold: int
    beta_index: int
    f1: float
    checkpoint: str = ""
    beta: float = float("nan")


def _rank(c: Candidate):
    return (-c.f1, c.fold, c.beta_index)


def select_topk(candidates: Sequence[Candidate], k: int) -> list[Candidate]:
    """The ``k`` best candidates by F1; ties go to the lower fold, then the lower beta index."""
    if k < 1 or k > len(candidates):
        raise ValueError(f"k must lie in [1, {len(candidates)}], got {k}")
    return sorted(candidates, key=_rank)[:k]


def per_fold_best(candidates: Sequence[Candidate]) -> list[Candidate]:
    """The best candidate of every fold, in fold order (ties go to the lower beta index)."""
    if not candidates:
        raise ValueError("no candidates")
    best: dict[int, Candidate] = {}
    for c in sorted(candidates, key=_rank):
        best.setdefault(c.fold, c)
    return [best[f] for f in sorted(best)]


STRATEGIES = {
    "per-fold-best": per_fold_best,
    "top1-5": lambda cands: select_topk(cands, 5),
    "top1-10": lambda cands: select_topk(cands, 10),
}


def select(candidates: Sequence[Candidate], strategy: str) -> list[Candidate]:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown ensemble strategy {strategy!r}; choose from {sorted(STRATEGIES)}")
    return STRATEGIES[strategy](candidates)
