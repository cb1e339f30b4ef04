"""Stratified k-fold assignment."""
from __future__ import annotations

from collections import Counter
from typing import Hashable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def make_folds(strata: Sequence[Iterable[Hashable]], k: int = 5, seed: int = 0) -> list[int]:
    """Fold index per item, balancing every stratum tag across folds.

    ``strata[i]`` lists the tags of item ``i`` (for a clip: its subset and one
    tag per class present). Items with more tags go first; items sharing a
    tag set are visited together, in seeded random order, so each stratum is
    dealt round-robin over the smallest folds. Each item goes to the fold
    minimizing the largest count of its tags there, then the summed count,
    then fold size and fold index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(strata) < k:
        raise ValueError(f"{len(strata)} items cannot fill {k} folds")
    tags = [tuple(dict.fromkeys(s)) for s in strata]
    keys = [tuple(sorted(map(repr, t))) for t in tags]
    order = np.random.default_rng(seed).permutation(len(tags))
    group: dict[tuple, int] = {}
    for i in order:
        group.setdefault(keys[i], len(group))
    order = sorted(order, key=lambda i: (-len(tags[i]), group[keys[i]]))
    counts = [Counter() for _ in range(k)]
    sizes = [0] * k
    folds = [0] * len(tags)

    def load(f, item_tags):
        c = [counts[f][t] for t in item_tags]
        return max(c), sum(c), sizes[f], f

    for i in order:
        best = min(range(k), key=lambda f: load(f, tags[i]))
        folds[i] = best
        counts[best].update(tags[i])
        sizes[best] += 1
    return folds


def split_fold(items: Sequence[T], folds: Sequence[int], fold: int, k: int) -> tuple[list[T], list[T]]:
    """``(train, holdout)`` for one fold; with ``k == 1`` everything trains."""
    if k == 1:
        return list(items), []
    if not 0 <= fold < k:
        raise ValueError(f"fold must lie in [0, {k}), got {fold}")
    train = [x for x, f in zip(items, folds) if f != fold]
    held = [x for x, f in zip(items, folds) if f == fold]
    return train, held
