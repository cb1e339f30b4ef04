"""ADAM, the exponential ramp-up schedule and ReduceLROnPlateau."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def rampup_factor(epoch: float, rampup_epochs: int) -> float:
    """``exp(-5 (1 - min(epoch / rampup_epochs, 1))^2)``; 1 once the ramp is over."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if rampup_epochs <= 0:
        return 1.0
    phase = 1.0 - min(epoch / rampup_epochs, 1.0)
    return math.exp(-5.0 * phase * phase)


def rampup_lr(epoch: float, max_lr: float = 1e-3, rampup_epochs: int = 50) -> float:
    return max_lr * rampup_factor(epoch, rampup_epochs)


@dataclass
class OptimizerState:
    """Per-parameter ADAM moments plus the step count and the current learning rate."""

    lr: float
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, values: dict[str, np.ndarray], names, lr: float, **kw) -> "OptimizerState":
        return cls(lr=lr, m={k: np.zeros_like(values[k]) for k in names},
                   v={k: np.zeros_like(values[k]) for k in names}, **kw)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out

    def scalars(self) -> dict:
        return {"lr": self.lr, "step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], scalars: dict) -> "OptimizerState":
        m = {k[len("adam.m."):]: a for k, a in arrays.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v."):]: a for k, a in arrays.items() if k.startswith("adam.v.")}
        if set(m) != set(v):
            raise ValueError("optimizer state has unpaired moments")
        return cls(lr=scalars["lr"], step=scalars["step"], m=m, v=v, beta1=scalars["beta1"],
                   beta2=scalars["beta2"], eps=scalars["eps"])


def adam_step(values: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected ADAM update, applied to ``values`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        values[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class PlateauState:
    """Bookkeeping for ReduceLROnPlateau in "min" mode with an absolute threshold."""

    best: float = math.inf
    bad_epochs: int = 0
    factor: float = 0.5
    patience: int = 10
    min_delta: float = 1e-4
    min_lr: float = 1e-5

    def to_dict(self) -> dict:
        return {"best": self.best, "bad_epochs": self.bad_epochs, "factor": self.factor,
                "patience": self.patience, "min_delta": self.min_delta, "min_lr": self.min_lr}


def reduce_lr_on_plateau(metric: float, lr: float, state: PlateauState) -> float:
    """Feed one epoch's validation loss; returns the learning rate for the next epoch.

    An epoch improves when ``metric < best - min_delta``. After ``patience``
    consecutive non-improving epochs the rate is multiplied by
    ``factor`` (never below ``min_lr``) and the counter restarts.
    """
    if metric < state.best - state.min_delta:
        state.best = metric
        state.bad_epochs = 0
        return lr
    state.bad_epochs += 1
    if state.bad_epochs >= state.patience:
        state.bad_epochs = 0
        return max(lr * state.factor, state.min_lr)
    return lr
