"""Event lists: decoding frame probabilities, label grids and TSV files."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import median_filter

from ..tensor_core.checkpoint import atomic_write_bytes

CLIP_SECONDS = 10.0
EVENT_HEADER = ("clip_id", "onset", "offset", "event_label")


@dataclass(frozen=True, order=True)
class DetectionEvent:
    class_id: int
    onset: float
    offset: float

    def __post_init__(self):
        if not 0.0 <= self.onset < self.offset:
            raise ValueError(f"invalid event interval [{self.onset}, {self.offset})")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


def frame_seconds(n_frames: int, clip_seconds: float = CLIP_SECONDS) -> float:
    return clip_seconds / n_frames


def decode_events(strong: np.ndarray, threshold: float = 0.5, median_len: int = 7,
                  clip_seconds: float = CLIP_SECONDS) -> list[DetectionEvent]:
    """Binarize ``strong`` (frames x classes) at ``> threshold``, smooth, and merge runs.

    The median filter runs along time per class (edges repeat the border
    frame). A run of active frames ``[a, b)`` becomes the event
    ``(a * clip_seconds / frames, b * clip_seconds / frames)``.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if median_len < 1 or median_len % 2 == 0:
        raise ValueError(f"median_len must be odd and positive, got {median_len}")
    strong = np.asarray(strong)
    n_frames = strong.shape[0]
    active = (strong > threshold).astype(np.int8)
    if median_len > 1:
        active = median_filter(active, size=(median_len, 1), mode="nearest")
    events = []
    for c in range(active.shape[1]):
        padded = np.concatenate([[0], active[:, c], [0]])
        edges = np.flatnonzero(np.diff(padded))
        for start, stop in zip(edges[::2], edges[1::2]):
            events.append(DetectionEvent(c, float(start * clip_seconds / n_frames),
                                         float(stop * clip_seconds / n_frames)))
    events.sort(key=lambda e: (e.onset, e.class_id))
    return events


def events_to_grid(events: Iterable[DetectionEvent], n_frames: int, n_classes: int,
                   clip_seconds: float = CLIP_SECONDS) -> np.ndarray:
    """Strong label grid: rows ``round(onset/dt)`` up to ``round(offset/dt)``, at least one row."""
    grid = np.zeros((n_frames, n_classes))
    dt = frame_seconds(n_frames, clip_seconds)
    for e in events:
        if not 0 <= e.class_id < n_classes:
            raise ValueError(f"class id {e.class_id} outside [0, {n_classes})")
        a = min(int(round(e.onset / dt)), n_frames - 1)
        b = max(min(int(round(e.offset / dt)), n_frames), a + 1)
        grid[a:b, e.class_id] = 1.0
    return grid


# -- TSV event files ----------------------------------------------------------

def format_events(events: dict[str, Sequence[DetectionEvent]], class_names: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(EVENT_HEADER)
    for clip_id in sorted(events):
        for e in sorted(events[clip_id], key=lambda e: (e.onset, e.class_id, e.offset)):
            writer.writerow((clip_id, repr(float(e.onset)), repr(float(e.offset)), class_names[e.class_id]))
    return buf.getvalue()


def write_events(path: str | Path, events: dict[str, Sequence[DetectionEvent]],
                 class_names: Sequence[str]) -> None:
    atomic_write_bytes(path, format_events(events, class_names).encode())


def parse_events(text: str, class_names: Sequence[str], source: str = "<events>") -> dict[str, list[DetectionEvent]]:
    index = {name: i for i, name in enumerate(class_names)}
    out: dict[str, list[DetectionEvent]] = {}
    rows = list(csv.reader(io.StringIO(text), delimiter="\t"))
    if not rows:
        return out
    if tuple(rows[0]) != EVENT_HEADER:
        raise ValueError(f"{source}:1: expected header {EVENT_HEADER}")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ValueError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        clip_id, onset, offset, label = row
        if label not in index:
            raise ValueError(f"{source}:{lineno}: unknown event label {label!r}")
        try:
            event = DetectionEvent(index[label], float(onset), float(offset))
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
        out.setdefault(clip_id, []).append(event)
    return out


def read_events(path: str | Path, class_names: Sequence[str]) -> dict[str, list[DetectionEvent]]:
    return parse_events(Path(path).read_text(), class_names, str(path))
