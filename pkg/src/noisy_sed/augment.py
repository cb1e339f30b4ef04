"""Feature-noise injections on log-mel grids: masking, mixup, circular shift.

Spectrograms are ``(time, mel)`` arrays; strong labels are ``(out_frames,
classes)`` grids at the model's output resolution. All randomness comes from
an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    time_mask_max: int = 30
    freq_mask_max: int = 16
    n_masks_per_axis: int = 1
    mixup_alpha: float = 0.2
    shift_std_freq: float = 4.0
    shift_std_time: float = 32.0
    seed: int = 0

    def __post_init__(self):
        if min(self.time_mask_max, self.freq_mask_max, self.n_masks_per_axis) < 0:
            raise ValueError("mask sizes and counts must be non-negative")
        if self.shift_std_freq < 0 or self.shift_std_time < 0:
            raise ValueError("shift standard deviations must be non-negative")
        if not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be positive")


def mask_stripes(spec: np.ndarray, time_stripes, freq_stripes) -> np.ndarray:
    """Zero the given ``[start, stop)`` stripes along time and frequency."""
    out = np.array(spec, dtype=np.float64, copy=True)
    for t0, t1 in time_stripes:
        out[t0:t1, :] = 0.0
    for f0, f1 in freq_stripes:
        out[:, f0:f1] = 0.0
    return out


def _draw_stripes(rng: np.random.Generator, size: int, max_width: int, count: int):
    if max_width >= size:
        raise ValueError(f"mask width {max_width} must be smaller than axis length {size}")
    stripes = []
    for _ in range(count):
        width = int(rng.integers(0, max_width + 1))
        start = int(rng.integers(0, size - width + 1))
        stripes.append((start, start + width))
    return stripes


def spec_augment(spec: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Zero random time and frequency stripes.

    Widths are uniform on ``{0, ..., max}`` and starts uniform over the valid
    range, ``n_masks_per_axis`` stripes per axis.
    """
    n_time, n_freq = spec.shape
    times = _draw_stripes(rng, n_time, cfg.time_mask_max, cfg.n_masks_per_axis)
    freqs = _draw_stripes(rng, n_freq, cfg.freq_mask_max, cfg.n_masks_per_axis)
    return mask_stripes(spec, times, freqs)


def expected_masked_fraction(n_time: int, n_freq: int, time_max: int, freq_max: int) -> float:
    """Closed-form mean occluded fraction for one stripe per axis."""
    ft = time_max / 2.0 / n_time
    ff = freq_max / 2.0 / n_freq
    return ft + ff - ft * ff


def sample_mix_weight(cfg: AugmentConfig, rng: np.random.Generator) -> float:
    return float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))


def mixup(a, b, lam: float):
    """Convex combination ``lam * a + (1 - lam) * b`` of ``(spec, label)`` pairs.

    Labels may be ``None`` (unlabeled clips) or any array matching its
    partner; strong grids and weak vectors are mixed the same way.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup weight must lie in [0, 1], got {lam}")
    (xa, ya), (xb, yb) = a, b
    xa, xb = np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"mixup shape mismatch: {xa.shape} vs {xb.shape}")
    x = lam * xa + (1.0 - lam) * xb
    if ya is None or yb is None:
        return x, None
    ya, yb = np.asarray(ya, dtype=np.float64), np.asarray(yb, dtype=np.float64)
    if ya.shape != yb.shape:
        raise ValueError(f"mixup label shape mismatch: {ya.shape} vs {yb.shape}")
    return x, lam * ya + (1.0 - lam) * yb


def round_half_away(x: float) -> int:
    return int(np.sign(x) * np.floor(abs(x) + 0.5))


def label_shift(dt: int, n_in: int, n_out: int) -> int:
    """Input-frame shift converted to the nearest output frame."""
    return round_half_away(dt * n_out / n_in)


def shift(spec: np.ndarray, label, dt: int, df: int):
    """Circularly roll ``spec`` by ``dt`` frames and ``df`` bins; roll ``label`` in time to match."""
    out = np.roll(np.roll(spec, dt, axis=0), df, axis=1)
    if label is None:
        return out, None
    label = np.asarray(label)
    if label.ndim == 1:  # clip-level labels are shift invariant
        return out, label.copy()
    return out, np.roll(label, label_shift(dt, spec.shape[0], label.shape[0]), axis=0)


def time_freq_shift(spec: np.ndarray, label, rng: np.random.Generator,
                    cfg: AugmentConfig = AugmentConfig()):
    """Random circular shift with Gaussian offsets rounded to whole frames/bins."""
    df = round_half_away(rng.normal(0.0, cfg.shift_std_freq)) if cfg.shift_std_freq else 0
    dt = round_half_away(rng.normal(0.0, cfg.shift_std_time)) if cfg.shift_std_time else 0
    return shift(spec, label, dt, df)


def augment_batch(specs: np.ndarray, labels: list, groups: list, cfg: AugmentConfig,
                  rng: np.random.Generator, masking: bool = True, mixing: bool = True,
                  shifting: bool = True):
    """Apply masking -> mixup -> shift to every clip in a batch.

    Mixup partners are drawn from the same ``groups`` entry (label kind), so
    strong grids mix with strong grids and weak vectors with weak vectors.
    Returns new arrays; inputs are not modified.
    """
    n = len(specs)
    xs = [np.asarray(s, dtype=np.float64) for s in specs]
    ys = [None if y is None else np.asarray(y, dtype=np.float64) for y in labels]
    if masking:
        xs = [spec_augment(x, cfg, rng) for x in xs]
    if mixing:
        partner = np.arange(n)
        for g in sorted(set(groups)):
            idx = np.array([i for i in range(n) if groups[i] == g])
            partner[idx] = idx[rng.permutation(idx.size)]
        mixed = []
        for i in range(n):
            lam = sample_mix_weight(cfg, rng)
            j = partner[i]
            mixed.append(mixup((xs[i], ys[i]), (xs[j], ys[j]), lam))
        xs = [m[0] for m in mixed]
        ys = [m[1] for m in mixed]
    if shifting:
        shifted = [time_freq_shift(x, y, rng, cfg) for x, y in zip(xs, ys)]
        xs = [s[0] for s in shifted]
        ys = [s[1] for s in shifted]
    return np.stack(xs), ys
