"""Event-based precision, recall and F1 with onset/offset collars."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .events import DetectionEvent

ONSET_COLLAR = 0.2
OFFSET_COLLAR = 0.2
OFFSET_COLLAR_RATE = 0.2


@dataclass(frozen=True)
class F1Score:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def events_match(ref: DetectionEvent, est: DetectionEvent, onset_collar: float = ONSET_COLLAR,
                 offset_collar: float = OFFSET_COLLAR, offset_rate: float = OFFSET_COLLAR_RATE) -> bool:
    """Same class, onsets within ``onset_collar``, offsets within ``max(offset_collar, rate * ref duration)``."""
    if ref.class_id != est.class_id:
        return False
    if abs(ref.onset - est.onset) > onset_collar:
        return False
    return abs(ref.offset - est.offset) <= max(offset_collar, offset_rate * ref.duration)


def count_matches(ref: Sequence[DetectionEvent], est: Sequence[DetectionEvent], **collars) -> int:
    """Size of a maximum one-to-one matching between ``ref`` and ``est`` events of one clip."""
    if not ref or not est:
        return 0
    adjacency = np.array([[events_match(r, e, **collars) for e in est] for r in ref], dtype=np.int8)
    if not adjacency.any():
        return 0
    matching = maximum_bipartite_matching(csr_matrix(adjacency), perm_type="column")
    return int(np.count_nonzero(matching >= 0))


def event_f1(ref: Mapping[str, Sequence[DetectionEvent]], est: Mapping[str, Sequence[DetectionEvent]],
             **collars) -> F1Score:
    """Micro-averaged event F1 over all clips and classes.

    Clips missing from either mapping have no events there. With no
    reference and no estimated events at all the score is a perfect 1.
    """
    tp = n_ref = n_est = 0
    for clip in set(ref) | set(est):
        r, e = list(ref.get(clip, ())), list(est.get(clip, ()))
        n_ref += len(r)
        n_est += len(e)
        tp += count_matches(r, e, **collars)
    fp, fn = n_est - tp, n_ref - tp
    if n_ref == 0 and n_est == 0:
        return F1Score(1.0, 1.0, 1.0, 0, 0, 0)
    precision = tp / n_est if n_est else 0.0
    recall = tp / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
    return F1Score(f1, precision, recall, tp, fp, fn)
