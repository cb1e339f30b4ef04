"""Single optimization steps, pseudo labeling and held-out evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..augment import AugmentConfig, augment_batch
from ..evaluation.events import decode_events
from ..evaluation.f1 import event_f1
from ..rcrnn import ModelParams, forward, leaf_tensors, predict
from ..tensor_core import backward, ops
from ..tensor_core.nn import bce
from .data import ClipRecord, TrainConfig
from .losses import PSEUDO, STRONG, WEAK, bce_mean, consistency_loss, semi_supervised_loss
from .optim import OptimizerState, adam_step, rampup_factor
from .params import ema_decay, ema_update


class TrainingDiverged(RuntimeError):
    """A loss or activation became non-finite; ``diagnostics`` describes the state."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.message = message
        self.diagnostics = diagnostics


def _diagnostics(params: ModelParams, opt: OptimizerState, **extra) -> dict:
    norms = {k: float(np.sqrt(np.sum(v * v))) for k, v in params.values.items()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1] if np.isfinite(kv[1]) else -np.inf)[:3]
    bad = [k for k, v in params.values.items() if not np.all(np.isfinite(v))]
    return {"optimizer_step": opt.step, "lr": opt.lr, "largest_param_norms": worst,
            "nonfinite_params": bad[:5], **extra}


def _apply_gradients(loss, leaves, student: ModelParams, opt: OptimizerState) -> None:
    backward(loss, leaves=list(leaves.values()))
    grads = {k: t.grad for k, t in leaves.items()}
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDiverged("non-finite gradient", _diagnostics(student, opt, parameters=bad[:5]))
    adam_step(student.values, grads, opt)


@dataclass
class StepLosses:
    total: float
    strong: float = 0.0
    weak: float = 0.0
    consistency: float = 0.0


def _batch_arrays(batch: Sequence[ClipRecord], labels):
    x = np.stack([r.features for r in batch])
    return x, [labels(r) for r in batch], [r.kind for r in batch]


def mean_teacher_step(batch: Sequence[ClipRecord], student: ModelParams, teacher: ModelParams,
                      opt: OptimizerState, cfg: TrainConfig, aug: AugmentConfig, epoch: int,
                      rng: np.random.Generator) -> tuple[StepLosses, ModelParams]:
    """One stage-1 update; ``student`` and ``opt`` change in place, the new teacher is returned.

    Loss: strong BCE over strong clips, weak BCE over weak clips, and the
    ramped MSE consistency between student and teacher over every clip.
    Inputs get time-frequency shift and mixup (partners of the same kind);
    the teacher sees the same augmented batch without dropout.
    """
    def label(r):
        return r.strong_label if r.kind == STRONG else r.weak_label if r.kind == WEAK else None

    x, labels, kinds = _batch_arrays(batch, label)
    xa, ya = augment_batch(x, labels, kinds, aug, rng, masking=False)
    try:
        leaves = leaf_tensors(student, True)
        s_strong, s_weak = forward(student, xa, training=True, rng=rng, leaves=leaves)
        t_strong, t_weak = forward(teacher, xa, training=False)
        strong_idx = [i for i, k in enumerate(kinds) if k == STRONG]
        weak_idx = [i for i, k in enumerate(kinds) if k == WEAK]
        terms, parts = [], {}
        if strong_idx:
            t = bce_mean(s_strong[strong_idx], np.stack([ya[i] for i in strong_idx]))
            terms.append(t)
            parts["strong"] = float(t.data)
        if weak_idx:
            t = bce_mean(s_weak[weak_idx], np.stack([ya[i] for i in weak_idx]))
            terms.append(t)
            parts["weak"] = float(t.data)
        cons = consistency_loss(s_strong, s_weak, t_strong.data, t_weak.data)
        weight = cfg.consistency_weight_max * rampup_factor(epoch, cfg.rampup_epochs)
        parts["consistency"] = float(cons.data)
        total = ops.mul(cons, weight)
        for t in terms:
            total = ops.add(total, t)
        _apply_gradients(total, leaves, student, opt)
    except FloatingPointError as exc:
        raise TrainingDiverged(str(exc), _diagnostics(student, opt, epoch=epoch)) from exc
    teacher = ema_update(teacher, student, ema_decay(opt.step - 1, cfg.ema_decay))
    return StepLosses(float(total.data), **parts), teacher


def noisy_student_step(batch: Sequence[ClipRecord], student: ModelParams, opt: OptimizerState,
                       beta: float, aug: AugmentConfig, rng: np.random.Generator) -> StepLosses:
    """One stage-2 update under SpecAugment, mixup, shift and dropout noise.

    Strong clips use their ground-truth grids, pseudo clips their binarized
    teacher grids; mixing and shifting act on those grids alongside the input.
    """
    x, labels, kinds = _batch_arrays(batch, lambda r: r.strong_label)
    xa, ya = augment_batch(x, labels, kinds, aug, rng)
    try:
        leaves = leaf_tensors(student, True)
        s_strong, _ = forward(student, xa, training=True, rng=rng, leaves=leaves)
        loss = semi_supervised_loss(s_strong, kinds, ya, beta)
        _apply_gradients(loss, leaves, student, opt)
    except FloatingPointError as exc:
        raise TrainingDiverged(str(exc), _diagnostics(student, opt)) from exc
    return StepLosses(float(loss.data))


def pseudo_label(teacher: ModelParams, clips: Sequence[ClipRecord], threshold: float = 0.5,
                 batch_size: int = 16) -> list[ClipRecord]:
    """Binarized teacher predictions (``prob > threshold``) as pseudo strong labels.

    For weakly labeled clips, classes absent from the weak tag are forced to 0.
    """
    if not clips:
        return []
    preds = predict(teacher, np.stack([c.features for c in clips]), batch_size)
    out = []
    for clip, pred in zip(clips, preds):
        grid = (pred.strong > threshold).astype(np.float64)
        if clip.weak_label is not None:
            grid *= (np.asarray(clip.weak_label) > 0)[None, :]
        out.append(ClipRecord(clip.clip_id, clip.features, PSEUDO, strong_label=grid,
                              weak_label=clip.weak_label))
    return out


@dataclass
class HoldoutScore:
    loss: float
    f1: float


def evaluate_holdout(params: ModelParams, clips: Sequence[ClipRecord], cfg: TrainConfig,
                     batch_size: int = 16) -> Optional[HoldoutScore]:
    """Mean per-clip supervised loss and event F1 (strong clips) in inference mode.

    Strong clips contribute strong-grid BCE, weak clips weak-vector BCE;
    unlabeled clips are ignored. ``None`` when no clip carries a label.
    """
    labeled = [c for c in clips if c.kind in (STRONG, WEAK)]
    if not labeled:
        return None
    preds = predict(params, np.stack([c.features for c in labeled]), batch_size)
    losses, ref, est = [], {}, {}
    for clip, pred in zip(labeled, preds):
        if clip.kind == STRONG:
            losses.append(float(np.mean(bce(pred.strong, clip.strong_label).data)))
            ref[clip.clip_id] = clip.events if clip.events is not None else \
                decode_events(clip.strong_label, 0.5, 1)
            est[clip.clip_id] = decode_events(pred.strong, cfg.threshold, cfg.median_len)
        else:
            losses.append(float(np.mean(bce(pred.weak[0], clip.weak_label).data)))
    f1 = event_f1(ref, est).f1 if ref else 0.0
    return HoldoutScore(float(np.mean(losses)), f1)
