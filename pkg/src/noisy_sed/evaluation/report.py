"""Scoring predictions against reference events and writing the score report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..rcrnn import StrongPrediction
from ..tensor_core.checkpoint import atomic_write_bytes
from .events import CLIP_SECONDS, DetectionEvent, decode_events
from .f1 import event_f1
from .psds import SCENARIO_1, SCENARIO_2, psds, threshold_grid


@dataclass(frozen=True)
class ScoreReport:
    event_f1: float
    precision: float
    recall: float
    psds1: float
    psds2: float
    n_clips: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def decode_all(predictions: Mapping[str, StrongPrediction], threshold: float, median_len: int,
               clip_seconds: float = CLIP_SECONDS) -> dict[str, list[DetectionEvent]]:
    return {clip: decode_events(p.strong, threshold, median_len, clip_seconds)
            for clip, p in predictions.items()}


def score(ref: Mapping[str, Sequence[DetectionEvent]], predictions: Mapping[str, StrongPrediction],
          n_classes: int, threshold: float = 0.5, median_len: int = 7, n_thresholds: int = 50,
          clip_seconds: float = CLIP_SECONDS) -> ScoreReport:
    """Event F1 at ``threshold`` plus PSDS for both scenarios over a threshold sweep."""
    clips = sorted(predictions)
    missing = set(ref) - set(clips)
    if missing:
        raise ValueError(f"no predictions for reference clips {sorted(missing)[:3]}")
    f1 = event_f1(ref, decode_all(predictions, threshold, median_len, clip_seconds))
    sweep = [decode_all(predictions, t, median_len, clip_seconds) for t in threshold_grid(n_thresholds)]
    durations = {c: clip_seconds for c in clips}
    return ScoreReport(
        event_f1=f1.f1, precision=f1.precision, recall=f1.recall,
        psds1=psds(ref, sweep, durations, n_classes, SCENARIO_1),
        psds2=psds(ref, sweep, durations, n_classes, SCENARIO_2),
        n_clips=len(clips),
    )


def write_report(path: str | Path, report: ScoreReport) -> None:
    atomic_write_bytes(path, report.to_json().encode())
