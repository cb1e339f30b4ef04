"""Parameter initialization, EMA updates and checkpoint I/O."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from ..rcrnn import ModelConfig, ModelParams, param_specs
from ..tensor_core.checkpoint import load_arrays, save_arrays


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit BN scale, zero BN shift.

    Running means start at 0 and running variances at 1.
    """
    values: dict[str, np.ndarray] = {}
    for name, spec in param_specs(cfg).items():
        if spec.kind == "weight":
            bound = np.sqrt(6.0 / (spec.fan_in + spec.fan_out))
            values[name] = rng.uniform(-bound, bound, size=spec.shape)
        elif spec.kind in ("gamma", "running_var"):
            values[name] = np.ones(spec.shape)
        else:
            values[name] = np.zeros(spec.shape)
    return ModelParams(cfg, values)


def ema_update(teacher: ModelParams, student: ModelParams, alpha: float) -> ModelParams:
    """New teacher ``alpha * teacher + (1 - alpha) * student`` for every array, buffers included."""
    if list(teacher.values) != list(student.values):
        raise ValueError("teacher and student parameter sets differ")
    out = {}
    for k, t in teacher.values.items():
        s = student.values[k]
        if t.shape != s.shape:
            raise ValueError(f"{k}: teacher shape {t.shape} != student shape {s.shape}")
        out[k] = alpha * t + (1.0 - alpha) * s
    return ModelParams(teacher.config, out)


def ema_decay(step: int, alpha: float) -> float:
    """Warm-up decay ``min(1 - 1/(step + 1), alpha)``."""
    return min(1.0 - 1.0 / (step + 1), alpha)


def save_params(path: str | Path, params: ModelParams, extra: Optional[dict[str, np.ndarray]] = None,
                metadata: Optional[dict] = None) -> None:
    """Write ``params`` (plus optional extra arrays) with the model config in the header."""
    arrays = dict(params.values)
    if extra:
        arrays.update(extra)
    meta = {"model_config": params.config.to_dict()}
    meta.update(metadata or {})
    save_arrays(path, arrays, meta)


def load_params(path: str | Path) -> tuple[ModelParams, dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_params`: ``(params, extra_arrays, metadata)``."""
    arrays, meta = load_arrays(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    names = list(param_specs(cfg))
    missing = [n for n in names if n not in arrays]
    if missing:
        raise ValueError(f"{path}: checkpoint lacks parameters {missing[:3]}...")
    params = ModelParams(cfg, {n: arrays[n] for n in names})
    params.check()
    extra = {k: v for k, v in arrays.items() if k not in params.values}
    return params, extra, meta


def params_digest(params: ModelParams) -> str:
    import hashlib
    h = hashlib.sha256()
    h.update(json.dumps(params.config.to_dict(), sort_keys=True).encode())
    for k, v in params.values.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()
