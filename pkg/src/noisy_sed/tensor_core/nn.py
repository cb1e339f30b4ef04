"""Layer primitives: convolution, pooling, gating, normalization, dropout, GRU, BCE.

Spatial inputs are ``(N, C, H, W)``; a missing batch axis is accepted and
restored on output. Each primitive carries its own hand-written backward.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .ops import _sigmoid
from .tensor import Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
BCE_CLAMP = 1e-7


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv2d(x, weight, bias=None, stride=(1, 1), padding=None) -> Tensor:
    """2-D cross-correlation via im2col.

    ``padding=None`` selects "same" padding ``(kh // 2, kw // 2)``, which keeps
    the spatial size for odd kernels at unit stride. Columns are laid out
    channel-major, ``(C * kh * kw, N * H' * W')``, so both the gather and the
    backward scatter move contiguous rows.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects (N,C,H,W) input and (O,C,kh,kw) kernels, "
                         f"got {x.shape} and {weight.shape}")
    n, c, h, w = xd.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernels expect {cw}")
    sh, sw = _pair(stride)
    ph, pw = (kh // 2, kw // 2) if padding is None else _pair(padding)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{w}")

    xp = np.zeros((c, n, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + w] = xd.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    del xp
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
        parents.append(bias)
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    if unbatched:
        out = out[0]
    if not weight.requires_grad:
        cols = None

    def backward(g):
        g4 = g[None] if unbatched else g
        go = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(o, -1)
        gx = gw = None
        if weight.requires_grad:
            gw = (go @ cols.T).reshape(weight.shape)
        if x.requires_grad:
            dcols = (wmat.T @ go).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros((c, n, h + 2 * ph, w + 2 * pw))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, i, j]
            gx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3))
            if unbatched:
                gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(go.sum(axis=1))
        return grads

    return Tensor._from_op(out, parents, backward, "conv2d")


def pooled_size(size: int, window: int) -> int:
    """Output length of non-overlapping pooling with window clamping."""
    return size // min(window, size)


def avg_pool2d(x, window) -> Tensor:
    """Non-overlapping average pooling over the last two axes.

    Trailing remainders are dropped; a window larger than its axis is clamped
    to the axis length, so pooling a length-1 axis is a no-op.
    """
    x = as_tensor(x)
    wh, ww = _pair(window)
    if wh < 1 or ww < 1:
        raise ValueError(f"pool window must be >= 1, got {(wh, ww)}")
    *lead, h, w = x.shape
    wh, ww = min(wh, h), min(ww, w)
    ho, wo = h // wh, w // ww
    cropped = x.data[..., : ho * wh, : wo * ww]
    out = cropped.reshape(*lead, ho, wh, wo, ww).mean(axis=(-3, -1))
    scale = 1.0 / (wh * ww)

    def backward(g):
        full = np.zeros(x.shape)
        up = np.repeat(np.repeat(g * scale, wh, axis=-2), ww, axis=-1)
        full[..., : ho * wh, : wo * ww] = up
        return (full,)

    return Tensor._from_op(out, (x,), backward, "avg_pool2d")


def glu(x, axis: int = -3) -> Tensor:
    """Gated linear unit: first half of ``axis`` times sigmoid of the second half.

    The default axis is the channel axis of a ``(N, C, H, W)`` or ``(C, H, W)`` map.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    size = x.shape[axis]
    if size % 2:
        raise ValueError(f"glu needs an even size along axis {axis}, got {size}")
    a, b = np.split(x.data, 2, axis=axis)
    gate = _sigmoid(b)

    def backward(g):
        return (np.concatenate([g * gate, g * a * gate * (1.0 - gate)], axis=axis),)

    return Tensor._from_op(a * gate, (x,), backward, "glu")


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In inference mode the running statistics are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,):
        raise ValueError(f"batch_norm parameters must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    count = x.size // c

    if training:
        mu = x.data.mean(axis=axes)
        centered = x.data - mu.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / max(count - 1, 1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.copy()
        var = running_var.copy()
        centered = x.data - mu.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        gg = gb = gx = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=axes)
        if beta.requires_grad:
            gb = g.sum(axis=axes)
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (dxhat - s1 / count - xhat * s2 / count) * inv_std.reshape(bshape)
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward, "batch_norm")


def dropout(x, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def gru(x, w_ih, w_hh, b_ih, b_hh, reverse: bool = False) -> Tensor:
    """Single-direction GRU over ``x`` of shape ``(N, T, F)`` from a zero state.

    Gate layout along the ``3H`` axis is (reset, update, candidate):

        r = s(W_ir x + b_ir + W_hr h + b_hr)
        z = s(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h

    With ``reverse=True`` time is consumed from the end; outputs stay aligned
    with their input positions.
    """
    x, w_ih, w_hh, b_ih, b_hh = map(as_tensor, (x, w_ih, w_hh, b_ih, b_hh))
    if x.ndim != 3:
        raise ValueError(f"gru expects (N, T, F) input, got {x.shape}")
    n, t_len, f = x.shape
    hidden = w_hh.shape[1]
    if w_ih.shape != (3 * hidden, f) or w_hh.shape != (3 * hidden, hidden):
        raise ValueError(f"gru weight shapes {w_ih.shape}, {w_hh.shape} do not fit "
                         f"input features {f} and hidden size {hidden}")
    xi = x.data @ w_ih.data.T + b_ih.data  # (N, T, 3H)
    whh = w_hh.data
    bhh = b_hh.data
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    out = np.zeros((n, t_len, hidden))
    cache = []
    h = np.zeros((n, hidden))
    for t in steps:
        hh = h @ whh.T + bhh
        xt = xi[:, t]
        r = _sigmoid(xt[:, :hidden] + hh[:, :hidden])
        z = _sigmoid(xt[:, hidden:2 * hidden] + hh[:, hidden:2 * hidden])
        hn = hh[:, 2 * hidden:]
        cand = np.tanh(xt[:, 2 * hidden:] + r * hn)
        h_new = (1.0 - z) * cand + z * h
        cache.append((t, h, r, z, cand, hn))
        out[:, t] = h_new
        h = h_new

    def backward(g):
        dxi = np.zeros_like(xi)
        dwhh = np.zeros_like(whh)
        dbhh = np.zeros_like(bhh)
        dh_next = np.zeros((n, hidden))
        for t, h_prev, r, z, cand, hn in reversed(cache):
            dh = g[:, t] + dh_next
            dcand = dh * (1.0 - z)
            dz = dh * (h_prev - cand)
            da_n = dcand * (1.0 - cand * cand)
            dr = da_n * hn
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dxt = np.concatenate([da_r, da_z, da_n], axis=1)
            dhh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dxi[:, t] = dxt
            dwhh += dhh.T @ h_prev
            dbhh += dhh.sum(axis=0)
            dh_next = dh * z + dhh @ whh
        flat = dxi.reshape(-1, 3 * hidden)
        gx = (dxi @ w_ih.data) if x.requires_grad else None
        gw_ih = flat.T @ x.data.reshape(-1, f)
        gb_ih = flat.sum(axis=0)
        return gx, gw_ih, dwhh, gb_ih, dbhh

    return Tensor._from_op(out, (x, w_ih, w_hh, b_ih, b_hh), backward, "gru")


def gru_bidirectional(x, forward_params, backward_params) -> Tensor:
    """Forward and time-reversed GRU, each rectified, concatenated on the feature axis.

    Each params argument is ``(w_ih, w_hh, b_ih, b_hh)``. Output is ``(N, T, 2H)``.
    """
    fwd = ops.relu(gru(x, *forward_params))
    bwd = ops.relu(gru(x, *backward_params, reverse=True))
    return ops.concat([fwd, bwd], axis=-1)


def bce(pred, target, clamp: float = BCE_CLAMP) -> Tensor:
    """Elementwise binary cross-entropy against a constant target.

    Predictions are clamped to ``[clamp, 1 - clamp]``; no gradient flows
    through the clamp when it is active, nor into ``target``.
    """
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"bce shape mismatch: {pred.shape} vs {t.shape}")
    p = np.clip(pred.data, clamp, 1.0 - clamp)
    inside = (pred.data >= clamp) & (pred.data <= 1.0 - clamp)
    out = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))

    def backward(g):
        return (g * inside * (p - t) / (p * (1.0 - p)),)

    return Tensor._from_op(out, (pred,), backward, "bce")


def mse(a, b) -> Tensor:
    return ops.mean(ops.square(ops.sub(a, b)))
