"""Differentiable operations over :class:`Tensor`.

Shapes must match exactly; the only broadcast is a per-channel bias on
``[batch, channels, time]`` activations.
"""

from __future__ import annotations

import logging

import numpy as np

from .tensor import ShapeError, Tensor, record

log = logging.getLogger(__name__)


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return record(a.data * s, (a,), lambda g: (g * s,), "scale")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return record(a.data + a.dtype.type(s), (a,), lambda g: (g,), "add_scalar")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return record(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    return record(np.logaddexp(0, x).astype(x.dtype), (a,), lambda g: (g * _sigmoid(x),), "softplus")


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return record(np.where(mask, x, 0).astype(x.dtype), (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return record(y, (a,), lambda g: (g * y,), "exp")


def log_(a: Tensor) -> Tensor:
    x = a.data
    return record(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: Tensor) -> Tensor:
    x = a.data
    return record(x * x, (a,), lambda g: (2 * g * x,), "square")


def gated_unit(a: Tensor, b: Tensor) -> Tensor:
    """tanh(a) * sigmoid(b), the WaveNet gated activation."""
    _same_shape("gated_unit", a, b)
    t = np.tanh(a.data)
    s = _sigmoid(b.data)

    def backward(g):
        return g * s * (1 - t * t), g * t * s * (1 - s)

    return record(t * s, (a, b), backward, "gated_unit")


# ------------------------------------------------------------------ reductions

def sum_(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    out = np.asarray(a.data.sum(dtype=np.float64), dtype=dtype)
    return record(out, (a,), lambda g: (np.full(shape, g, dtype=dtype),), "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape, dtype = a.shape, a.dtype
    out = np.asarray(a.data.sum(dtype=np.float64) / n, dtype=dtype)
    return record(out, (a,), lambda g: (np.full(shape, g / n, dtype=dtype),), "mean")


# --------------------------------------------------------------------- shaping

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                  lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[index] = g
        return (out,)

    return record(a.data[index], (a,), backward, "getitem")


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def upsample(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour repeat of every time step ``factor`` times."""
    B, C, T = a.shape

    def backward(g):
        return (g.reshape(B, C, T, factor).sum(-1),)

    return record(np.repeat(a.data, factor, axis=2), (a,), backward, "upsample")


def add_channel_bias(x: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 3 or bias.shape != (x.shape[1],):
        raise ShapeError(f"bias {bias.shape} does not match channels of {x.shape}")
    return record(x.data + bias.data[None, :, None], (x, bias),
                  lambda g: (g, g.sum(axis=(0, 2))), "bias")


# ---------------------------------------------------------------- convolutions

def _check_conv(x: Tensor, w: Tensor, bias: Tensor | None):
    if x.ndim != 3 or w.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {bias.shape} for {w.shape[0]} output channels")


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, dilation: int = 1, mode: str = "causal",
           cond: Tensor | None = None) -> Tensor:
    """Dilated 1-D convolution with output length equal to input length.

    ``causal`` left-pads by ``dilation*(k-1)`` zeros; ``same`` pads
    ``dilation*(k-1)/2`` on each side and needs an odd kernel width.
    ``cond`` (``[batch, c_out, T/r]``) is repeated ``r`` times along time
    and added to the output.
    """
    _check_conv(x, w, bias)
    k = w.shape[2]
    if k < 1 or dilation < 1:
        raise ValueError("conv1d needs k >= 1 and dilation >= 1")
    if mode == "causal":
        left, right = dilation * (k - 1), 0
    elif mode == "same":
        if k % 2 == 0:
            raise ValueError(f"same-mode conv1d needs an odd kernel width, got {k}")
        left = right = dilation * (k - 1) // 2
    else:
        raise ValueError(f"unknown conv mode {mode!r}")
    B, Ci, T = x.shape
    Co = w.shape[0]
    factor = 1
    if cond is not None:
        if cond.ndim != 3 or cond.shape[:2] != (B, Co) or T % cond.shape[2]:
            raise ShapeError(f"conv1d: conditioning {cond.shape} does not fit output {(B, Co, T)}")
        factor = T // cond.shape[2]

    def im2col():
        # row j*Ci + i holds channel i shifted by tap j
        xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
        if k == 1:
            return xp
        return np.concatenate([xp[:, :, j * dilation:j * dilation + T] for j in range(k)], axis=1)

    wc = np.ascontiguousarray(w.data.transpose(0, 2, 1).reshape(Co, k * Ci))
    out = np.matmul(wc, im2col())
    if bias is not None:
        out += bias.data[None, :, None]
    if cond is not None:
        out.reshape(B, Co, -1, factor)[...] += cond.data[:, :, :, None]

    def backward(g):
        cols = im2col()
        g2 = g.transpose(1, 0, 2).reshape(Co, -1)
        gwc = g2 @ cols.transpose(1, 0, 2).reshape(k * Ci, -1).T
        del cols
        gw = np.ascontiguousarray(gwc.reshape(Co, k, Ci).transpose(0, 2, 1))
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wc.T, g)
            gxp = np.zeros((B, Ci, T + left + right), dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j * dilation:j * dilation + T] += gcols[:, j * Ci:(j + 1) * Ci]
            gx = np.ascontiguousarray(gxp[:, :, left:left + T])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        if cond is not None:
            grads.append(g.reshape(B, Co, -1, factor).sum(axis=-1))
        return grads

    inputs = [x, w] + ([bias] if bias is not None else []) + ([cond] if cond is not None else [])
    return record(out, inputs, backward, f"conv1d[{mode},d={dilation}]")


def dense(x: Tensor, w: Tensor, bias: Tensor | None = None, residual: Tensor | None = None) -> Tensor:
    """Per-time-step linear map (1x1 convolution); ``w`` is ``[c_out, c_in]``.

    ``residual``, when given, is added to the result in the same node.
    """
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} for {w.shape[0]} output channels")
    xd, wd = x.data, w.data
    out = np.matmul(wd, xd)
    if bias is not None:
        out += bias.data[None, :, None]
    if residual is not None:
        if residual.shape != out.shape:
            raise ShapeError(f"dense: residual {residual.shape} vs output {out.shape}")
        out += residual.data

    def backward(g):
        Co, Ci = wd.shape
        gw = g.transpose(1, 0, 2).reshape(Co, -1) @ xd.transpose(1, 0, 2).reshape(Ci, -1).T
        gx = np.matmul(wd.T, g) if x.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        if residual is not None:
            grads.append(g)
        return grads

    inputs = [x, w] + ([bias] if bias is not None else []) + ([residual] if residual is not None else [])
    return record(out, inputs, backward, "dense")


# -------------------------------------------------------------------- pooling

def avg_pool1d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Non-overlapping mean pooling over time (``window == stride``)."""
    stride = window if stride is None else stride
    if window != stride:
        raise ValueError("only non-overlapping pooling (window == stride) is supported")
    B, C, T = x.shape
    if T % stride:
        raise ShapeError(f"time length {T} not divisible by pooling stride {stride}")
    out = x.data.reshape(B, C, T // stride, stride).mean(axis=-1, dtype=np.float64).astype(x.dtype)

    def backward(g):
        return (np.repeat(g / g.dtype.type(stride), stride, axis=2),)

    return record(out, (x,), backward, "avg_pool1d")


# ---------------------------------------------------------------- batch norm

class BatchNormStats:
    """Running per-channel statistics for :func:`batch_norm1d`."""

    def __init__(self, channels: int, momentum: float = 0.9):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.updates = 0
        self.untrained_eval = False


def batch_norm1d(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats,
                 training: bool = True, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (batch, time).

    In training mode the batch statistics are used and the running
    statistics are updated as ``momentum * running + (1 - momentum) * batch``.
    """
    B, C, T = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("batch_norm1d: gamma/beta must have one entry per channel")
    xd = x.data
    dt = x.dtype
    if training:
        mu = xd.mean(axis=(0, 2), dtype=np.float64)
        var = xd.var(axis=(0, 2), dtype=np.float64)
        m = stats.momentum
        stats.mean = m * stats.mean + (1 - m) * mu
        stats.var = m * stats.var + (1 - m) * var
        stats.updates += 1
    else:
        if stats.updates == 0 and not stats.untrained_eval:
            log.warning("batch_norm1d evaluated before any training step; using initial statistics")
            stats.untrained_eval = True
        mu, var = stats.mean, stats.var
    inv = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (xd - mu.astype(dt)[None, :, None]) * inv[None, :, None]
    gd = gamma.data
    out = xhat * gd[None, :, None] + beta.data[None, :, None]

    def backward(g):
        gbeta = g.sum(axis=(0, 2), dtype=np.float64).astype(dt)
        ggamma = (g * xhat).sum(axis=(0, 2), dtype=np.float64).astype(dt)
        gxhat = g * gd[None, :, None]
        if training:
            s1 = gxhat.mean(axis=(0, 2), dtype=np.float64).astype(dt)
            s2 = (gxhat * xhat).mean(axis=(0, 2), dtype=np.float64).astype(dt)
            gx = inv[None, :, None] * (gxhat - s1[None, :, None] - xhat * s2[None, :, None])
        else:
            gx = gxhat * inv[None, :, None]
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), backward, "batch_norm1d")


# --------------------------------------------------------------------- losses

def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits).

    ``logits`` is ``[batch, classes, time]``, ``targets`` is ``[batch, time]``.
    """
    B, K, T = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (B, T):
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= K):
        raise IndexError(f"target classes must lie in [0, {K})")
    dt = logits.dtype
    p = logits.data - logits.data.max(axis=1, keepdims=True)
    bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
    picked = p[bi, targets, ti].astype(np.float64)
    np.exp(p, out=p)
    se = p.sum(axis=1, dtype=np.float64)
    n = B * T
    loss = (np.log(se) - picked).sum() / n
    p /= se.astype(dt)[:, None, :]

    def backward(g):
        d = p.copy()
        d[bi, targets, ti] -= 1
        d *= g / dt.type(n)
        return (d,)

    return record(np.asarray(loss, dtype=dt), (logits,), backward, "softmax_cross_entropy")
