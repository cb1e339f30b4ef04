"""Residual convolutional recurrent network for frame-level event detection.

Layout (default config, input ``1 x 625 x 128``)::

    stem      2 x [7x7 conv -> BN -> GLU -> 2x2 avg pool]          32 x 156 x 32
    residual  6 x [(3x3 conv -> BN -> ReLU) x 2 + skip -> CBAM -> 1x2 avg pool]
                                                                   128 x 156 x 1
    recurrent 2 x BiGRU(128), ReLU on each direction               156 x 256
    head      linear -> sigmoid per frame (strong), weighted pooling (weak)

Dropout follows every conv block and precedes the linear head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .tensor_core import nn, ops
from .tensor_core.nn import pooled_size
from .tensor_core.tensor import Tensor, as_tensor


@dataclass(frozen=True)
class ModelConfig:
    n_frames: int = 625
    n_mels: int = 128
    n_classes: int = 10
    stem_channels: tuple[int, ...] = (16, 32)
    stem_kernel: int = 7
    stem_pool: tuple[int, int] = (2, 2)
    res_channels: tuple[int, ...] = (64, 128, 128, 128, 128, 128)
    res_kernel: int = 3
    res_pool: tuple[int, int] = (1, 2)
    cbam_reduction: int = 8
    cbam_kernel: int = 7
    gru_hidden: int = 128
    gru_layers: int = 2
    dropout: float = 0.5

    def __post_init__(self):
        for c in self.res_channels:
            if c % self.cbam_reduction:
                raise ValueError(f"residual width {c} not divisible by CBAM reduction {self.cbam_reduction}")
        object.__setattr__(self, "stem_channels", tuple(self.stem_channels))
        object.__setattr__(self, "res_channels", tuple(self.res_channels))
        object.__setattr__(self, "stem_pool", tuple(self.stem_pool))
        object.__setattr__(self, "res_pool", tuple(self.res_pool))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# -- parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    shape: tuple[int, ...]
    kind: str  # weight | bias | gamma | beta | running_mean | running_var
    fan_in: int = 0
    fan_out: int = 0


def _conv_spec(out_c, in_c, k):
    return ParamSpec((out_c, in_c, k, k), "weight", in_c * k * k, out_c * k * k)


def _bn_specs(prefix, c):
    return {
        f"{prefix}.weight": ParamSpec((c,), "gamma"),
        f"{prefix}.bias": ParamSpec((c,), "beta"),
        f"{prefix}.running_mean": ParamSpec((c,), "running_mean"),
        f"{prefix}.running_var": ParamSpec((c,), "running_var"),
    }


def param_specs(cfg: ModelConfig) -> dict[str, ParamSpec]:
    """Every parameter and buffer of the network, in a fixed order."""
    specs: dict[str, ParamSpec] = {}
    in_c = 1
    for i, c in enumerate(cfg.stem_channels):
        p = f"stem.{i}"
        specs[f"{p}.conv.weight"] = _conv_spec(2 * c, in_c, cfg.stem_kernel)
        specs[f"{p}.conv.bias"] = ParamSpec((2 * c,), "bias")
        specs.update(_bn_specs(f"{p}.bn", 2 * c))
        in_c = c
    for i, c in enumerate(cfg.res_channels):
        p = f"res.{i}"
        specs[f"{p}.conv1.weight"] = _conv_spec(c, in_c, cfg.res_kernel)
        specs[f"{p}.conv1.bias"] = ParamSpec((c,), "bias")
        specs.update(_bn_specs(f"{p}.bn1", c))
        specs[f"{p}.conv2.weight"] = _conv_spec(c, c, cfg.res_kernel)
        specs[f"{p}.conv2.bias"] = ParamSpec((c,), "bias")
        specs.update(_bn_specs(f"{p}.bn2", c))
        if in_c != c:
            specs[f"{p}.proj.weight"] = _conv_spec(c, in_c, 1)
            specs[f"{p}.proj.bias"] = ParamSpec((c,), "bias")
        hidden = c // cfg.cbam_reduction
        specs[f"{p}.cbam.mlp1.weight"] = ParamSpec((hidden, c), "weight", c, hidden)
        specs[f"{p}.cbam.mlp1.bias"] = ParamSpec((hidden,), "bias")
        specs[f"{p}.cbam.mlp2.weight"] = ParamSpec((c, hidden), "weight", hidden, c)
        specs[f"{p}.cbam.mlp2.bias"] = ParamSpec((c,), "bias")
        specs[f"{p}.cbam.spatial.weight"] = _conv_spec(1, 2, cfg.cbam_kernel)
        specs[f"{p}.cbam.spatial.bias"] = ParamSpec((1,), "bias")
        in_c = c
    freq = cfg.n_mels
    for _ in cfg.stem_channels:
        freq = pooled_size(freq, cfg.stem_pool[1])
    for _ in cfg.res_channels:
        freq = pooled_size(freq, cfg.res_pool[1])
    feat = in_c * freq
    h = cfg.gru_hidden
    for layer in range(cfg.gru_layers):
        for direction in ("fwd", "bwd"):
            p = f"gru.{layer}.{direction}"
            specs[f"{p}.w_ih"] = ParamSpec((3 * h, feat), "weight", feat, 3 * h)
            specs[f"{p}.w_hh"] = ParamSpec((3 * h, h), "weight", h, 3 * h)
            specs[f"{p}.b_ih"] = ParamSpec((3 * h,), "bias")
            specs[f"{p}.b_hh"] = ParamSpec((3 * h,), "bias")
        feat = 2 * h
    specs["fc.weight"] = ParamSpec((cfg.n_classes, feat), "weight", feat, cfg.n_classes)
    specs["fc.bias"] = ParamSpec((cfg.n_classes,), "bias")
    return specs


BUFFER_KINDS = ("running_mean", "running_var")


@dataclass
class ModelParams:
    """Named parameter and buffer arrays for one network instance."""

    config: ModelConfig
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.values.items()})

    def trainable_names(self) -> list[str]:
        specs = param_specs(self.config)
        return [k for k in self.values if specs[k].kind not in BUFFER_KINDS]

    def check(self) -> None:
        specs = param_specs(self.config)
        if list(specs) != list(self.values):
            missing = set(specs) - set(self.values)
            extra = set(self.values) - set(specs)
            raise ValueError(f"parameter set does not match config (missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)})")
        for k, spec in specs.items():
            if self.values[k].shape != spec.shape:
                raise ValueError(f"{k}: shape {self.values[k].shape} != {spec.shape}")

    def n_trainable(self) -> int:
        return int(sum(self.values[k].size for k in self.trainable_names()))


def leaf_tensors(params: ModelParams, requires_grad: bool) -> dict[str, Tensor]:
    """Wrap trainable arrays as graph leaves (buffers stay plain arrays)."""
    return {k: Tensor(params.values[k], requires_grad=requires_grad) for k in params.trainable_names()}


# -- building blocks ----------------------------------------------------------

def cbam(x, p: dict, prefix: str) -> Tensor:
    """Channel attention (shared MLP over avg/max pooled maps) then spatial attention.

    ``x`` is ``(N, C, T, F)``; both attention maps lie in (0, 1) and are
    applied multiplicatively.
    """
    x = as_tensor(x)
    n, c = x.shape[:2]
    w1, b1 = p[f"{prefix}.mlp1.weight"], p[f"{prefix}.mlp1.bias"]
    w2, b2 = p[f"{prefix}.mlp2.weight"], p[f"{prefix}.mlp2.bias"]

    def mlp(v):
        hidden = ops.relu(ops.add(ops.matmul(v, ops.transpose(w1)), b1))
        return ops.add(ops.matmul(hidden, ops.transpose(w2)), b2)

    avg = ops.mean(x, axis=(2, 3))
    mx = ops.max(x, axis=(2, 3))
    channel = ops.sigmoid(ops.add(mlp(avg), mlp(mx))).reshape(n, c, 1, 1)
    x = ops.mul(x, channel)
    pooled = ops.concat([ops.mean(x, axis=1, keepdims=True), ops.max(x, axis=1, keepdims=True)], axis=1)
    spatial = ops.sigmoid(nn.conv2d(pooled, p[f"{prefix}.spatial.weight"], p[f"{prefix}.spatial.bias"]))
    return ops.mul(x, spatial)


def weighted_pool(strong) -> Tensor:
    """Clip-level probability per class: sum_t p^2 / sum_t p along the time axis.

    Evaluated as ``m + sum_t p (p - m) / sum_t p`` with ``m`` the (constant)
    per-class maximum, which is algebraically identical, returns ``p``
    exactly for a constant column, and maps an all-zero column to 0.
    """
    strong = as_tensor(strong)
    axis = strong.ndim - 2
    ref = Tensor(np.max(strong.data, axis=axis, keepdims=True))
    num = ops.sum(ops.mul(strong, ops.sub(strong, ref)), axis=axis)
    den = ops.sum(strong, axis=axis)
    den = ops.add(den, (den.data == 0).astype(np.float64))
    return ops.add(ops.div(num, den), Tensor(np.squeeze(ref.data, axis=axis)))


def _bn(h, p, values, prefix, training):
    return nn.batch_norm(h, p[f"{prefix}.weight"], p[f"{prefix}.bias"],
                         values[f"{prefix}.running_mean"], values[f"{prefix}.running_var"], training)


def residual_block(x, p: dict, values: dict, prefix: str, cfg: ModelConfig, training: bool) -> Tensor:
    """pool(cbam(conv_bn_relu(conv_bn_relu(x)) + skip(x))); skip is a 1x1 conv on width change."""
    h = ops.relu(_bn(nn.conv2d(x, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"]),
                     p, values, f"{prefix}.bn1", training))
    h = ops.relu(_bn(nn.conv2d(h, p[f"{prefix}.conv2.weight"], p[f"{prefix}.conv2.bias"]),
                     p, values, f"{prefix}.bn2", training))
    if f"{prefix}.proj.weight" in p:
        skip = nn.conv2d(x, p[f"{prefix}.proj.weight"], p[f"{prefix}.proj.bias"])
    else:
        skip = as_tensor(x)
    y = cbam(ops.add(h, skip), p, f"{prefix}.cbam")
    return nn.avg_pool2d(y, cfg.res_pool)


def stem_block(x, p: dict, values: dict, prefix: str, cfg: ModelConfig, training: bool) -> Tensor:
    h = nn.conv2d(x, p[f"{prefix}.conv.weight"], p[f"{prefix}.conv.bias"])
    h = nn.glu(_bn(h, p, values, f"{prefix}.bn", training), axis=1)
    return nn.avg_pool2d(h, cfg.stem_pool)


# -- network ------------------------------------------------------------------

@dataclass
class StrongPrediction:
    strong: np.ndarray  # (frames, classes)
    weak: np.ndarray    # (1, classes)


def forward(params: ModelParams, x, training: bool = False, rng: Optional[np.random.Generator] = None,
            leaves: Optional[dict[str, Tensor]] = None, trace: Optional[list] = None):
    """Run the network on a batch ``x`` of shape ``(N, frames, mels)``.

    Returns ``(strong, weak)`` tensors of shapes ``(N, T_out, K)`` and
    ``(N, K)``. ``leaves`` supplies graph leaves for gradient tracking
    (see :func:`leaf_tensors`); without it the parameters are constants.
    Training mode enables dropout and batch statistics, and updates the BN
    running statistics inside ``params`` in place. ``trace`` collects
    ``(name, shape)`` pairs per block.
    """
    cfg = params.config
    x = as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[1:] != (cfg.n_frames, cfg.n_mels):
        raise ValueError(f"expected input (N, {cfg.n_frames}, {cfg.n_mels}), got {x.shape}")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")
    p = leaves if leaves is not None else {k: Tensor(v) for k, v in params.values.items()}
    values = params.values
    n = x.shape[0]

    def record(name, t):
        if trace is not None:
            trace.append((name, t.shape[1:]))

    h = x.reshape(n, 1, cfg.n_frames, cfg.n_mels)
    record("input", h)
    for i in range(len(cfg.stem_channels)):
        h = stem_block(h, p, values, f"stem.{i}", cfg, training)
        record(f"stem.{i}", h)
        h = nn.dropout(h, cfg.dropout, rng, training)
    for i in range(len(cfg.res_channels)):
        h = residual_block(h, p, values, f"res.{i}", cfg, training)
        record(f"res.{i}", h)
        h = nn.dropout(h, cfg.dropout, rng, training)
    _, c, t_out, f_out = h.shape
    seq = ops.transpose(h, (0, 2, 1, 3)).reshape(n, t_out, c * f_out)
    for layer in range(cfg.gru_layers):
        fwd = tuple(p[f"gru.{layer}.fwd.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh"))
        bwd = tuple(p[f"gru.{layer}.bwd.{k}"] for k in ("w_ih", "w_hh", "b_ih", "b_hh"))
        seq = nn.gru_bidirectional(seq, fwd, bwd)
    if trace is not None:
        trace.append(("recurrent", (seq.shape[2], seq.shape[1])))
    seq = nn.dropout(seq, cfg.dropout, rng, training)
    logits = ops.add(ops.matmul(seq, ops.transpose(p["fc.weight"])), p["fc.bias"])
    strong = ops.sigmoid(logits)
    weak = weighted_pool(strong)
    return strong, weak


def predict(params: ModelParams, x, batch_size: int = 16) -> list[StrongPrediction]:
    """Inference-mode predictions for a stack of spectrograms."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    out = []
    for start in range(0, len(x), batch_size):
        strong, weak = forward(params, x[start:start + batch_size], training=False)
        for s, w in zip(strong.data, weak.data):
            out.append(StrongPrediction(s.copy(), w[None, :].copy()))
    return out


def describe(cfg: ModelConfig) -> list[tuple[str, str]]:
    """Layer table ``(block, "C×T×F")`` computed from the configuration alone."""
    rows = [("input", f"1×{cfg.n_frames}×{cfg.n_mels}")]
    t, f = cfg.n_frames, cfg.n_mels
    for i, c in enumerate(cfg.stem_channels):
        t, f = pooled_size(t, cfg.stem_pool[0]), pooled_size(f, cfg.stem_pool[1])
        rows.append((f"stem.{i}", f"{c}×{t}×{f}"))
    for i, c in enumerate(cfg.res_channels):
        t, f = pooled_size(t, cfg.res_pool[0]), pooled_size(f, cfg.res_pool[1])
        rows.append((f"res.{i}", f"{c}×{t}×{f}"))
    rows.append(("recurrent", f"{2 * cfg.gru_hidden}×{t}"))
    rows.append(("strong", f"{t}×{cfg.n_classes}"))
    rows.append(("weak", f"1×{cfg.n_classes}"))
    return rows


def output_frames(cfg: ModelConfig) -> int:
    t = cfg.n_frames
    for _ in cfg.stem_channels:
        t = pooled_size(t, cfg.stem_pool[0])
    for _ in cfg.res_channels:
        t = pooled_size(t, cfg.res_pool[0])
    return t
