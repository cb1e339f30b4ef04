"""Polyphonic sound detection score.

Each operating point (one decoding threshold) is scored with intersection
criteria instead of collars:

* a detection is *valid* (DTC) when at least ``rho_dtc`` of its duration
  overlaps ground truth of its own class in the same clip;
* a ground-truth event is *detected* (GTC) when at least ``rho_gtc`` of its
  duration is covered by valid detections of its class;
* every invalid detection is a false positive, and an invalid detection
  whose overlap with ground truth of another class ``c'`` is nonzero and at
  least ``rho_cttc`` of its duration is also a cross-trigger on ``(c, c')``.

Per class, ``eFPR_c = FP_c / hours + alpha_ct * mean_{c' != c} CT_{c,c'} / hours``.
The per-class ROC is the staircase ``TPR_c(x) = max {TPR_c(op) : eFPR_c(op) <= x}``,
the summary curve is ``mean_c - alpha_st * std_c`` (clipped at 0) and the score
is its area on ``[0, e_max]`` divided by ``e_max``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .events import DetectionEvent


@dataclass(frozen=True)
class PsdsParams:
    rho_dtc: float
    rho_gtc: float
    rho_cttc: float
    alpha_ct: float
    alpha_st: float
    e_max: float = 100.0

    def __post_init__(self):
        for name in ("rho_dtc", "rho_gtc", "rho_cttc"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.alpha_ct < 0 or self.alpha_st < 0:
            raise ValueError("alphas must be >= 0")
        if self.e_max <= 0:
            raise ValueError("e_max must be > 0")


SCENARIO_1 = PsdsParams(0.7, 0.7, 0.0, 0.0, 1.0)
SCENARIO_2 = PsdsParams(0.1, 0.1, 0.3, 0.5, 1.0)


@dataclass(frozen=True)
class OperatingPoint:
    tpr: np.ndarray  # (classes,)
    efpr: np.ndarray  # (classes,) per hour


def _merge(intervals):
    merged = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


def _overlap(onset: float, offset: float, merged) -> float:
    """Length of ``[onset, offset]`` covered by disjoint sorted intervals."""
    return sum(max(0.0, min(offset, b) - max(onset, a)) for a, b in merged)


def operating_point(ref: Mapping[str, Sequence[DetectionEvent]], est: Mapping[str, Sequence[DetectionEvent]],
                    n_classes: int, total_hours: float, params: PsdsParams) -> OperatingPoint:
    tp = np.zeros(n_classes)
    n_gt = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    ct = np.zeros((n_classes, n_classes))
    for clip in set(ref) | set(est):
        gt = [[] for _ in range(n_classes)]
        for e in ref.get(clip, ()):
            gt[e.class_id].append((e.onset, e.offset))
        gt = [_merge(g) for g in gt]
        valid = [[] for _ in range(n_classes)]
        for d in est.get(clip, ()):
            c = d.class_id
            if _overlap(d.onset, d.offset, gt[c]) >= params.rho_dtc * d.duration:
                valid[c].append((d.onset, d.offset))
                continue
            fp[c] += 1
            for other in range(n_classes):
                if other == c:
                    continue
                hit = _overlap(d.onset, d.offset, gt[other])
                if hit > 0 and hit >= params.rho_cttc * d.duration:
                    ct[c, other] += 1
        for e in ref.get(clip, ()):
            n_gt[e.class_id] += 1
            covered = _overlap(e.onset, e.offset, _merge(valid[e.class_id]))
            if covered >= params.rho_gtc * e.duration:
                tp[e.class_id] += 1
    tpr = np.divide(tp, n_gt, out=np.zeros(n_classes), where=n_gt > 0)
    if n_classes > 1:
        ct_rate = (ct.sum(axis=1) / (n_classes - 1)) / total_hours
    else:
        ct_rate = np.zeros(n_classes)
    efpr = fp / total_hours + params.alpha_ct * ct_rate
    return OperatingPoint(tpr, efpr)


def psd_roc(points: Sequence[OperatingPoint], active: np.ndarray, params: PsdsParams):
    """Breakpoints ``x`` and the summary eTPR on each ``[x_i, x_{i+1})``."""
    efpr = np.stack([p.efpr for p in points])[:, active]
    tpr = np.stack([p.tpr for p in points])[:, active]
    xs = np.unique(np.concatenate([[0.0], efpr[efpr <= params.e_max]]))
    curves = np.zeros((len(xs), efpr.shape[1]))
    for k in range(efpr.shape[1]):
        for i, x in enumerate(xs):
            ok = efpr[:, k] <= x
            curves[i, k] = tpr[ok, k].max() if ok.any() else 0.0
    etpr = np.maximum(curves.mean(axis=1) - params.alpha_st * curves.std(axis=1), 0.0)
    return xs, etpr


def psds(ref: Mapping[str, Sequence[DetectionEvent]], est_per_threshold: Sequence[Mapping[str, Sequence[DetectionEvent]]],
         durations: Mapping[str, float], n_classes: int, params: PsdsParams) -> float:
    """Normalized area under the effective-TPR vs effective-FPR staircase.

    ``est_per_threshold`` holds one estimate mapping per operating point;
    ``durations`` gives every evaluated clip's length in seconds. Classes
    without reference events do not enter the TPR statistics.
    """
    if len(est_per_threshold) < 1:
        raise ValueError("psds needs at least one operating point")
    n_gt = np.zeros(n_classes)
    for events in ref.values():
        for e in events:
            n_gt[e.class_id] += 1
    if not n_gt.any():
        raise ValueError("psds needs a nonempty reference set")
    unknown = (set(ref) | set().union(*est_per_threshold)) - set(durations)
    if unknown:
        raise ValueError(f"no duration for clips {sorted(unknown)[:3]}")
    total_hours = sum(durations.values()) / 3600.0
    points = [operating_point(ref, est, n_classes, total_hours, params) for est in est_per_threshold]
    xs, etpr = psd_roc(points, n_gt > 0, params)
    widths = np.diff(np.append(xs, params.e_max))
    return float(np.dot(widths, etpr) / params.e_max)


def threshold_grid(n: int = 50, lo: float = 0.01, hi: float = 0.99) -> np.ndarray:
    return np.linspace(lo, hi, n)
