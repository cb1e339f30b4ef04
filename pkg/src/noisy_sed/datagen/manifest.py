"""Dataset manifest: one tab-separated row per clip.

Columns: ``clip_id``, ``path`` (relative to the manifest), ``subset``,
``weak_classes`` (comma list) and ``events`` (``label:onset:offset`` items
joined by ``;``, strongly labeled subsets only).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from ..tensor_core.checkpoint import atomic_write_bytes

MANIFEST_HEADER = ("clip_id", "path", "subset", "weak_classes", "events")
SUBSETS = ("strong", "weak", "unlabeled", "validation")
STRONG_SUBSETS = ("strong", "validation")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    clip_id: str
    path: str
    subset: str
    weak_classes: tuple[str, ...] = ()
    events: Optional[tuple[tuple[str, float, float], ...]] = None

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise ValueError(f"unknown subset {self.subset!r}")
        if (self.events is not None) != (self.subset in STRONG_SUBSETS):
            raise ValueError(f"{self.clip_id}: events must be given exactly for strong subsets")
        if self.subset == "unlabeled" and self.weak_classes:
            raise ValueError(f"{self.clip_id}: unlabeled clip lists classes")


def _format_row(row: ManifestRow) -> tuple[str, ...]:
    events = "" if row.events is None else ";".join(f"{n}:{on!r}:{off!r}" for n, on, off in row.events)
    return row.clip_id, row.path, row.subset, ",".join(row.weak_classes), events


def format_manifest(rows: Sequence[ManifestRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for row in rows:
        writer.writerow(_format_row(row))
    return buf.getvalue()


def write_manifest(path: str | Path, rows: Sequence[ManifestRow]) -> None:
    atomic_write_bytes(path, format_manifest(rows).encode())


def _parse_events(field: str) -> tuple[tuple[str, float, float], ...]:
    out = []
    for item in filter(None, field.split(";")):
        name, onset, offset = item.split(":")
        onset_f, offset_f = float(onset), float(offset)
        if not 0.0 <= onset_f < offset_f:
            raise ValueError(f"bad event interval {item!r}")
        out.append((name, onset_f, offset_f))
    return tuple(out)


def parse_manifest(text: str, source: str = "<manifest>") -> list[ManifestRow]:
    """Rows of a manifest; an empty file or a lone header is an empty manifest."""
    rows = list(csv.reader(io.StringIO(text), delimiter="\t"))
    if not rows:
        return []
    if tuple(rows[0]) != MANIFEST_HEADER:
        raise ManifestError(f"{source}:1: expected header {MANIFEST_HEADER}, got {tuple(rows[0])}")
    out, seen = [], set()
    for lineno, fields in enumerate(rows[1:], start=2):
        if not fields:
            continue
        try:
            if len(fields) != len(MANIFEST_HEADER):
                raise ValueError(f"expected {len(MANIFEST_HEADER)} fields, got {len(fields)}")
            clip_id, path, subset, weak, events = fields
            if not clip_id:
                raise ValueError("empty clip_id")
            if clip_id in seen:
                raise ValueError(f"duplicate clip_id {clip_id!r}")
            row = ManifestRow(clip_id, path, subset, tuple(filter(None, weak.split(","))),
                              _parse_events(events) if subset in STRONG_SUBSETS else None)
            if subset not in STRONG_SUBSETS and events:
                raise ValueError(f"{subset} clip carries events")
        except ValueError as exc:
            raise ManifestError(f"{source}:{lineno}: {exc}") from None
        seen.add(clip_id)
        out.append(row)
    return out


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return parse_manifest(path.read_text(), str(path))
