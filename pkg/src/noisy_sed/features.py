"""Log-mel feature extraction for 10 s mono clips.

Pipeline: resample 44.1 kHz -> 16 kHz, pad/truncate to 10 s, centered Hann
frames (2048 samples, hop 256, reflection padding at the edges), 2048-point
power spectrum, 128-band HTK mel filterbank with area normalization,
``log(x + 1e-10)``, then global mean/std normalization.
"""
from __future__ import annotations

import hashlib
import json
import warnings
import wave
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window, resample_poly

from .tensor_core.checkpoint import load_arrays, save_arrays

SUPPORTED_RATES = (44100, 16000)
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_fft: int = 2048
    hop_length: int = 256
    n_mels: int = 128
    duration: float = 10.0
    fmin: float = 0.0
    fmax: float | None = None
    log_eps: float = 1e-10

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return -(-self.n_samples // self.hop_length)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate not in SUPPORTED_RATES:
            raise ValueError(f"unsupported sample rate {self.sample_rate}; expected one of {SUPPORTED_RATES}")
        if self.samples.ndim != 1:
            raise ValueError("only mono clips are supported")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (time, mel)
    normalized: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"NormStats.std must be positive, got {self.std}")


# -- audio I/O ----------------------------------------------------------------

def read_wav(path: str | Path) -> AudioClip:
    """Read 16-bit PCM mono WAV."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


# -- signal stages ------------------------------------------------------------

def resample(clip: AudioClip, target_rate: int = 16000) -> AudioClip:
    """Polyphase band-limited resampling (44100 -> 16000 is up 160, down 441)."""
    if clip.sample_rate == target_rate:
        return clip
    if clip.sample_rate != 44100 or target_rate != 16000:
        raise ValueError(f"unsupported resampling {clip.sample_rate} -> {target_rate}")
    return AudioClip(resample_poly(clip.samples, 160, 441), target_rate)


def pad_or_truncate(samples: np.ndarray, length: int) -> np.ndarray:
    if samples.size >= length:
        return samples[:length].copy()
    return np.concatenate([samples, np.zeros(length - samples.size)])


def frame_and_fft(samples: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Power spectrogram ``(n_frames, n_fft // 2 + 1)`` of centered Hann frames.

    Frame ``t`` is centered on sample ``t * hop``; ``ceil(n_samples / hop)``
    frames are produced (625 for 160000 samples at hop 256).
    """
    x = pad_or_truncate(np.asarray(samples, dtype=np.float64), cfg.n_samples)
    half = cfg.n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    frames = sliding_window_view(padded, cfg.n_fft)[:: cfg.hop_length][: cfg.n_frames]
    window = get_window("hann", cfg.n_fft, fftbins=True)
    spectrum = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular HTK-mel filters ``(n_mels, n_fft // 2 + 1)``, area normalized.

    Each triangle is scaled by ``2 / (f_right - f_left)`` so its continuous
    area over frequency is one.
    """
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    bins = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_fft // 2 + 1)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - left) / (center - left)
    falling = (right - bins[None, :]) / (right - center)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (right - left))


_FILTERBANKS: dict[FeatureConfig, np.ndarray] = {}


def mel_project(power: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Mel energies followed by ``log(x + eps)``."""
    fb = _FILTERBANKS.get(cfg)
    if fb is None:
        fb = _FILTERBANKS[cfg] = mel_filterbank(cfg)
    return np.log(power @ fb.T + cfg.log_eps)


def extract(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    """Un-normalized log-mel grid ``(n_frames, n_mels)`` for one clip."""
    clip = resample(clip, cfg.sample_rate)
    return MelSpectrogram(mel_project(frame_and_fft(clip.samples, cfg), cfg))


# -- normalization ------------------------------------------------------------

def fit_norm_stats(corpus: Iterable[MelSpectrogram | np.ndarray]) -> NormStats:
    """Global scalar mean/std over every cell of every clip.

    Per-clip moments are merged with the pairwise update of Chan et al., so
    the corpus can be streamed. A degenerate (zero-variance) corpus is floored
    to ``STD_FLOOR`` with a warning.
    """
    count = 0
    mean = 0.0
    m2 = 0.0
    for item in corpus:
        x = item.frames if isinstance(item, MelSpectrogram) else np.asarray(item, dtype=np.float64)
        n_b = x.size
        if n_b == 0:
            continue
        mean_b = float(x.mean())
        m2_b = float(((x - mean_b) ** 2).sum())
        total = count + n_b
        delta = mean_b - mean
        mean += delta * n_b / total
        m2 += m2_b + delta * delta * count * n_b / total
        count = total
    if count == 0:
        raise ValueError("cannot fit normalization statistics on an empty corpus")
    std = float(np.sqrt(m2 / count))
    if std < STD_FLOOR:
        warnings.warn(f"corpus standard deviation {std:.3g} below floor; using {STD_FLOOR}",
                      RuntimeWarning, stacklevel=2)
        std = STD_FLOOR
    return NormStats(mean, std)


def normalize(spec: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    if spec.normalized:
        raise ValueError("spectrogram is already normalized")
    return MelSpectrogram((spec.frames - stats.mean) / stats.std, normalized=True)


def denormalize(spec: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    if not spec.normalized:
        raise ValueError("spectrogram is not normalized")
    return MelSpectrogram(spec.frames * stats.std + stats.mean, normalized=False)


# -- feature cache ------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_features(path: str | Path, spec: MelSpectrogram, source_digest: str,
                  cfg: FeatureConfig, stats: NormStats | None = None) -> None:
    """Cache one clip: the raw log-mel grid plus provenance and optional stats."""
    meta = {"source_sha256": source_digest, "feature_config": cfg.fingerprint(),
            "normalized": spec.normalized}
    if stats is not None:
        meta["norm_mean"] = stats.mean
        meta["norm_std"] = stats.std
    save_arrays(path, {"logmel": spec.frames}, meta)


def load_features(path: str | Path) -> tuple[MelSpectrogram, dict]:
    arrays, meta = load_arrays(path)
    return MelSpectrogram(arrays["logmel"], normalized=bool(meta.get("normalized", False))), meta


def save_norm_stats(path: str | Path, stats: NormStats) -> None:
    save_arrays(path, {}, {"mean": stats.mean, "std": stats.std})


def load_norm_stats(path: str | Path) -> NormStats:
    _, meta = load_arrays(path)
    return NormStats(float(meta["mean"]), float(meta["std"]))
