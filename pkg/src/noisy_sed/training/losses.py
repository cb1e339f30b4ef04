"""Supervised, consistency and semi-supervised losses.

Per-clip losses average over the cells of a clip's prediction grid; the
semi-supervised loss then sums those per-clip values over the batch.
"""
from __future__ import annotations

import numpy as np

from ..tensor_core import nn, ops
from ..tensor_core.nn import BCE_CLAMP
from ..tensor_core.tensor import Tensor, as_tensor

STRONG, WEAK, UNLABELED, PSEUDO = "strong", "weak", "unlabeled", "pseudo"


def bce_mean(pred, target, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross-entropy over every cell."""
    return ops.mean(nn.bce(pred, target, clamp))


def bce_soft(y_hat, y_bar, clamp: float = BCE_CLAMP) -> Tensor:
    """BCE of a prediction grid against a (soft) constant target grid, averaged over cells."""
    return bce_mean(y_hat, y_bar, clamp)


def interpolate_target(y_student, y_teacher_bin, beta: float) -> np.ndarray:
    """``beta * y_student + (1 - beta) * y_teacher_bin`` as a constant array.

    The student term is read from its current value; no gradient flows through it.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    ys = y_student.data if isinstance(y_student, Tensor) else np.asarray(y_student, dtype=np.float64)
    yt = np.asarray(y_teacher_bin, dtype=np.float64)
    if ys.shape != yt.shape:
        raise ValueError(f"target shape mismatch: {ys.shape} vs {yt.shape}")
    if beta == 0.0:
        return yt.copy()
    if beta == 1.0:
        return ys.copy()
    return beta * ys + (1.0 - beta) * yt


def semi_supervised_loss(strong_pred, kinds, labels, beta: float, clamp: float = BCE_CLAMP) -> Tensor:
    """Sum of per-clip BCE over strong clips plus per-clip soft BCE over the rest.

    ``strong_pred`` is the ``(N, T, K)`` frame-probability tensor, ``kinds`` the
    per-clip label kind and ``labels`` the per-clip ``(T, K)`` grids: ground
    truth for strong clips, binarized teacher predictions for weak, unlabeled
    and pseudo clips.
    """
    strong_pred = as_tensor(strong_pred)
    n = strong_pred.shape[0]
    if len(kinds) != n or len(labels) != n:
        raise ValueError("kinds and labels must have one entry per clip")
    terms = []
    for i in range(n):
        if labels[i] is None:
            raise ValueError(f"clip {i} ({kinds[i]}) has no strong or pseudo label")
        pred_i = strong_pred[i]
        if kinds[i] == STRONG:
            terms.append(bce_mean(pred_i, labels[i], clamp))
        elif kinds[i] in (WEAK, UNLABELED, PSEUDO):
            target = interpolate_target(pred_i, labels[i], beta)
            terms.append(bce_soft(pred_i, target, clamp))
        else:
            raise ValueError(f"unknown label kind {kinds[i]!r}")
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def consistency_loss(student_strong, student_weak, teacher_strong: np.ndarray,
                     teacher_weak: np.ndarray) -> Tensor:
    """MSE between student and (constant) teacher probabilities on both heads."""
    return ops.add(nn.mse(student_strong, Tensor(teacher_strong)), nn.mse(student_weak, Tensor(teacher_weak)))
