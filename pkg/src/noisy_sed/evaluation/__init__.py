"""Event decoding, event-based F1, PSDS and ensembling."""
from .ensemble import Candidate, ensemble_combine, per_fold_best, select, select_topk
from .events import (
    DetectionEvent, decode_events, events_to_grid, format_events, parse_events, read_events, write_events,
)
from .f1 import F1Score, event_f1
from .psds import SCENARIO_1, SCENARIO_2, OperatingPoint, PsdsParams, operating_point, psds
from .report import ScoreReport, score, write_report

__all__ = [
    "Candidate", "ensemble_combine", "per_fold_best", "select", "select_topk",
    "DetectionEvent", "decode_events", "events_to_grid", "format_events", "parse_events",
    "read_events", "write_events", "F1Score", "event_f1", "SCENARIO_1", "SCENARIO_2",
    "OperatingPoint", "PsdsParams", "operating_point", "psds", "ScoreReport", "score", "write_report",
]
