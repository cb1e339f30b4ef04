"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[np.ndarray], float], point: np.ndarray, eps: float = 1e-5,
                   indices: Optional[np.ndarray] = None) -> np.ndarray:
    """(f(x + eps e_i) - f(x - eps e_i)) / 2 eps for each flat index i."""
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = np.arange(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a| + |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5,
               max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               floor: float = 1e-6) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``point``.

    ``f`` maps a tensor to a scalar tensor. With ``max_entries`` only a random
    subset of coordinates is probed.
    """
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = f(x)
    backward(out, leaves=[x])
    analytic = x.grad

    def scalar(v: np.ndarray) -> float:
        return float(f(Tensor(v)).data)

    indices = None
    if max_entries is not None and max_entries < x.size:
        rng = rng or np.random.default_rng(0)
        indices = np.sort(rng.choice(x.size, size=max_entries, replace=False))
    numeric = numerical_grad(scalar, x.data, eps, indices)
    if indices is not None:
        return relative_error(analytic.reshape(-1)[indices], numeric.reshape(-1)[indices], floor)
    return relative_error(analytic, numeric, floor)
