"""Synthetic soundscapes: parametric events over pink noise with exact labels."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import chirp

from ..evaluation.events import DetectionEvent, write_events
from ..features import AudioClip, write_wav
from ..tensor_core.checkpoint import atomic_write_bytes
from .manifest import SUBSETS, ManifestRow, read_manifest, write_manifest

TEMPLATE_KINDS = ("tone", "noise", "chirp")
BACKGROUND_RMS = 0.02
FADE_SECONDS = 0.005


@dataclass(frozen=True)
class EventTemplate:
    """A parametric sound: pure tone at ``f_lo``, noise band or linear chirp over ``[f_lo, f_hi]``."""

    name: str
    kind: str
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        if not 0 < self.f_lo <= self.f_hi:
            raise ValueError(f"{self.name}: need 0 < f_lo <= f_hi")
        if any(ch in self.name for ch in ",;:\t\n"):
            raise ValueError(f"class name {self.name!r} contains a reserved character")


def default_templates(n_classes: int, f_min: float = 250.0, f_max: float = 5000.0) -> tuple[EventTemplate, ...]:
    """Kinds cycle tone, noise band, chirp over log-spaced center frequencies."""
    centers = np.geomspace(f_min, f_max, n_classes)
    out = []
    for i, fc in enumerate(centers):
        kind = TEMPLATE_KINDS[i % 3]
        fc = float(round(fc, 1))
        lo, hi = (fc, fc) if kind == "tone" else (round(fc / 1.25, 1), round(fc * 1.25, 1))
        out.append(EventTemplate(f"c{i}_{kind}", kind, lo, hi))
    return tuple(out)


@dataclass(frozen=True)
class SceneSpec:
    n_strong: int = 60
    n_weak: int = 60
    n_unlabeled: int = 120
    n_validation: int = 40
    n_classes: int = 10
    templates: tuple[EventTemplate, ...] = ()
    events_per_clip: tuple[int, int] = (1, 3)
    event_seconds: tuple[float, float] = (0.5, 3.0)
    snr_db: tuple[float, float] = (5.0, 20.0)
    duration: float = 10.0
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.sample_rate not in (16000, 44100):
            raise ValueError("sample_rate must be 16000 or 44100")
        templates = tuple(EventTemplate(**t) if isinstance(t, dict) else t for t in self.templates)
        if not templates:
            templates = default_templates(self.n_classes)
        if len(templates) != self.n_classes:
            raise ValueError(f"{len(templates)} templates for {self.n_classes} classes")
        nyquist = self.sample_rate / 2
        if any(t.f_hi >= nyquist for t in templates):
            raise ValueError("template frequency at or above Nyquist")
        object.__setattr__(self, "templates", templates)
        for name in ("events_per_clip", "event_seconds", "snr_db"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if min(self.n_strong, self.n_weak, self.n_unlabeled, self.n_validation) < 0:
            raise ValueError("subset sizes must be >= 0")
        if not 0 < self.duration <= 10.0:
            raise ValueError("duration must lie in (0, 10] seconds")
        lo, hi = self.event_seconds
        if not 0 < lo <= hi <= self.duration:
            raise ValueError("event_seconds must satisfy 0 < min <= max <= duration")
        if not 0 <= self.events_per_clip[0] <= self.events_per_clip[1]:
            raise ValueError("events_per_clip must be a (min, max) pair")

    @property
    def class_names(self) -> list[str]:
        return [t.name for t in self.templates]

    def subset_sizes(self) -> dict[str, int]:
        return {"strong": self.n_strong, "weak": self.n_weak, "unlabeled": self.n_unlabeled,
                "validation": self.n_validation}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["templates"] = [asdict(t) for t in self.templates]
        for k in ("events_per_clip", "event_seconds", "snr_db"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)


@dataclass
class SynthClip:
    clip_id: str
    subset: str
    samples: np.ndarray
    events: list[DetectionEvent] = field(default_factory=list)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum."""
    spectrum = np.fft.rfft(rng.normal(size=n))
    f = np.arange(spectrum.size)
    spectrum[0] = 0.0
    spectrum[1:] /= np.sqrt(f[1:])
    x = np.fft.irfft(spectrum, n)
    return x / np.sqrt(np.mean(x * x))


def render_event(t: EventTemplate, n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS event waveform of ``n`` samples with short raised-cosine fades."""
    time = np.arange(n) / sample_rate
    if t.kind == "tone":
        x = np.sin(2 * np.pi * t.f_lo * time + rng.uniform(0, 2 * np.pi))
    elif t.kind == "chirp":
        x = chirp(time, f0=t.f_lo, t1=max(time[-1], 1.0 / sample_rate), f1=t.f_hi, phi=rng.uniform(0, 360))
    else:
        spec = np.fft.rfft(rng.normal(size=n))
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[(freqs < t.f_lo) | (freqs > t.f_hi)] = 0.0
        x = np.fft.irfft(spec, n)
    fade = min(int(FADE_SECONDS * sample_rate), n // 2)
    if fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        x[:fade] *= ramp
        x[n - fade:] *= ramp[::-1]
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


SUBSET_CODES = {name: i for i, name in enumerate(SUBSETS)}


def synth_clip(spec: SceneSpec, subset: str, index: int) -> SynthClip:
    """Clip ``index`` of ``subset``; a pure function of ``spec``."""
    rng = np.random.default_rng([spec.seed, SUBSET_CODES[subset], index])
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    mix = BACKGROUND_RMS * pink_noise(n, rng)
    events: list[DetectionEvent] = []
    lo, hi = spec.events_per_clip
    for _ in range(int(rng.integers(lo, hi + 1))):
        cls = int(rng.integers(spec.n_classes))
        length = rng.uniform(*spec.event_seconds)
        for _attempt in range(20):
            onset = rng.uniform(0.0, spec.duration - length)
            a, b = int(round(onset * sr)), int(round((onset + length) * sr))
            if b - a < 2:
                continue
            on_s, off_s = a / sr, b / sr
            if all(e.class_id != cls or e.offset <= on_s or e.onset >= off_s for e in events):
                break
        else:
            continue
        level = BACKGROUND_RMS * 10.0 ** (rng.uniform(*spec.snr_db) / 20.0)
        mix[a:b] += level * render_event(spec.templates[cls], b - a, sr, rng)
        events.append(DetectionEvent(cls, on_s, off_s))
    peak = np.max(np.abs(mix))
    if peak > 0.95:
        mix *= 0.95 / peak
    events.sort(key=lambda e: (e.onset, e.class_id))
    return SynthClip(f"{subset}_{index:05d}", subset, mix, events)


@dataclass
class Dataset:
    root: Path
    rows: list[ManifestRow]
    class_names: list[str]

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.tsv"


def manifest_row(clip: SynthClip, class_names: list[str], path: str) -> ManifestRow:
    strong = clip.subset in ("strong", "validation")
    weak = () if clip.subset == "unlabeled" else tuple(
        class_names[c] for c in sorted({e.class_id for e in clip.events}))
    events = tuple((class_names[e.class_id], e.onset, e.offset) for e in clip.events) if strong else None
    return ManifestRow(clip.clip_id, path, clip.subset, weak, events)


def generate(spec: SceneSpec, root: str | Path) -> Dataset:
    """Write WAV files, ``manifest.tsv``, per-subset reference event files and ``dataset.json``."""
    root = Path(root)
    names = spec.class_names
    rows = []
    refs: dict[str, dict[str, list[DetectionEvent]]] = {"strong": {}, "validation": {}}
    for subset, count in spec.subset_sizes().items():
        for i in range(count):
            clip = synth_clip(spec, subset, i)
            rel = f"audio/{subset}/{clip.clip_id}.wav"
            write_wav(root / rel, AudioClip(clip.samples, spec.sample_rate))
            rows.append(manifest_row(clip, names, rel))
            if subset in refs:
                refs[subset][clip.clip_id] = clip.events
    write_manifest(root / "manifest.tsv", rows)
    for subset, events in refs.items():
        write_events(root / f"{subset}_events.tsv", events, names)
    info = {"classes": names, "scene_spec": spec.to_dict()}
    atomic_write_bytes(root / "dataset.json", (json.dumps(info, indent=2, sort_keys=True) + "\n").encode())
    return Dataset(root, rows, names)


def load_dataset_info(root: str | Path) -> dict:
    path = Path(root) / "dataset.json"
    if not path.exists():
        raise FileNotFoundError(f"dataset description not found: {path}")
    return json.loads(path.read_text())


def class_names_of(root: str | Path) -> list[str]:
    return list(load_dataset_info(root)["classes"])


def subset_of(rows: list[ManifestRow], subset: str) -> list[ManifestRow]:
    return [r for r in rows if r.subset == subset]


def signature(row: ManifestRow) -> tuple:
    """Stratum tags of a clip for fold assignment: its subset and each (subset, class) it contains."""
    return (row.subset, *((row.subset, c) for c in sorted(row.weak_classes)))


def read_dataset(root: str | Path, manifest: Optional[str | Path] = None) -> Dataset:
    root = Path(root)
    rows = read_manifest(manifest or root / "manifest.tsv")
    return Dataset(root, rows, class_names_of(root))
