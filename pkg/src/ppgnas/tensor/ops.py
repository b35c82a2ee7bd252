"""Differentiable operators over :class:`Tensor` (1D-CNN set).

Activations are laid out ``[N, C, L]``; fully connected tensors ``[N, F]``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = _const(a, b)
    else:
        b = _const(b, a)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(out, (a, b), backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.data.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size

    def backward(g):
        return (2.0 * g * diff / n,)

    return make_result(np.asarray((diff * diff).mean(), dtype=pred.data.dtype), (pred,), backward)


def cast(x: Tensor, dtype) -> Tensor:
    src = x.data.dtype

    def backward(g):
        return (g.astype(src),)

    return make_result(x.data.astype(dtype), (x,), backward)


def softmax(theta: Tensor) -> Tensor:
    z = theta.data - theta.data.max()
    e = np.exp(z)
    p = e / e.sum()

    def backward(g):
        return (p * (g - (g * p).sum()),)

    return make_result(p, (theta,), backward)


def weighted_sum(weights: Tensor, tensors: Sequence[Tensor]) -> Tensor:
    """``sum_i weights[i] * tensors[i]``; all ``tensors`` share one shape."""
    if weights.shape != (len(tensors),):
        raise ShapeError(f"weighted_sum: {weights.shape} weights for {len(tensors)} tensors")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"weighted_sum: mixed shapes {shape} and {t.shape}")
    w = weights.data
    out = np.zeros(shape, dtype=np.result_type(w, *[t.data for t in tensors]))
    for wi, t in zip(w, tensors):
        out += wi * t.data

    def backward(g):
        gw = np.array([(g * t.data).sum() for t in tensors], dtype=w.dtype)
        return (gw, *[(wi * g).astype(t.data.dtype) for wi, t in zip(w, tensors)])

    return make_result(out, (weights, *tensors), backward)


def dot_const(x: Tensor, c) -> Tensor:
    """Inner product of a 1-d tensor with a constant vector."""
    c = np.asarray(c, dtype=x.data.dtype)

    def backward(g):
        return (g * c,)

    return make_result(np.asarray((x.data * c).sum(), dtype=x.data.dtype), (x,), backward)


# -- convolution -------------------------------------------------------------

def conv_out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


def _check_geometry(op: str, length: int, k: int, stride: int, padding: int) -> int:
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"{op}: padding must be >= 0, got {padding}")
    if k > length + 2 * padding:
        raise ShapeError(f"{op}: kernel {k} longer than padded input {length + 2 * padding}")
    l_out = conv_out_len(length, k, stride, padding)
    if l_out < 1:
        raise ShapeError(f"{op}: output length {l_out} < 1")
    return l_out


def _windows(xp: np.ndarray, k: int, stride: int, l_out: int) -> np.ndarray:
    # [N, C, Lp] -> [N, C, l_out, k] (view)
    return sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :l_out]


def _scatter_windows(dcols: np.ndarray, length_padded: int, stride: int) -> np.ndarray:
    # inverse of _windows: [N, C, l_out, k] -> [N, C, Lp], summing overlaps
    n, c, l_out, k = dcols.shape
    dxp = np.zeros((n, c, length_padded), dtype=dcols.dtype)
    span = stride * (l_out - 1) + 1
    for kk in range(k):
        dxp[:, :, kk:kk + span:stride] += dcols[:, :, :, kk]
    return dxp


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis with zero padding."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d: expected input [N,C,L] and weight [O,C,K], got {x.shape} and {weight.shape}")
    n, c, length = x.shape
    o, c_w, k = weight.shape
    if c_w != c:
        raise ShapeError(f"conv1d: input has {c} channels but weight expects {c_w}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv1d: bias shape {bias.shape} != ({o},)")
    l_out = _check_geometry("conv1d", length, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = _windows(xp, k, stride, l_out).transpose(0, 2, 1, 3).reshape(n * l_out, c * k)
    w2 = weight.data.reshape(o, c * k)
    out = (cols @ w2.T).reshape(n, l_out, o).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(n * l_out, o)
        gw = (g2.T @ cols).reshape(o, c, k) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, l_out, c, k).transpose(0, 2, 1, 3)
            gx = _scatter_windows(dcols, xp.shape[2], stride)[:, :, padding:padding + length]
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Per-channel cross-correlation; ``weight`` is ``[C, 1, K]``."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"depthwise_conv1d: expected [N,C,L] and [C,1,K], got {x.shape} and {weight.shape}")
    n, c, length = x.shape
    c_w, one, k = weight.shape
    if c_w != c or one != 1:
        raise ShapeError(f"depthwise_conv1d: weight {weight.shape} incompatible with {c} channels")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"depthwise_conv1d: bias shape {bias.shape} != ({c},)")
    l_out = _check_geometry("depthwise_conv1d", length, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = _windows(xp, k, stride, l_out)
    w = weight.data[:, 0, :]
    out = np.einsum("nclk,ck->ncl", cols, w)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        gw = np.einsum("ncl,nclk->ck", g, cols)[:, None, :] if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = g[:, :, :, None] * w[None, :, None, :]
            gx = _scatter_windows(dcols, xp.shape[2], stride)[:, :, padding:padding + length]
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


# -- normalization -----------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5,
               update_stats: bool = True) -> Tensor:
    """Per-channel batch normalization over ``[N, C, L]``.

    In training mode the running buffers are updated in place (unbiased
    variance) unless ``update_stats`` is false.
    """
    if x.data.ndim != 3 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} vs {gamma.shape[0]} channels")
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        if update_stats:
            m = x.shape[0] * x.shape[2]
            unbiased = var * m / max(m - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2))
        gb = g.sum(axis=(0, 2))
        gxhat = g * gamma.data[None, :, None]
        if training:
            m = x.shape[0] * x.shape[2]
            gx = (inv[None, :, None] / m) * (
                m * gxhat - gxhat.sum(axis=(0, 2))[None, :, None]
                - xhat * (gxhat * xhat).sum(axis=(0, 2))[None, :, None])
        else:
            gx = gxhat * inv[None, :, None]
        return gx, gg, gb

    return make_result(out.astype(x.data.dtype), (x, gamma, beta), backward)


# -- pooling / resampling ----------------------------------------------------

def max_pool1d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    n, c, length = x.shape
    l_out = _check_geometry("max_pool1d", length, k, stride, 0)
    cols = _windows(x.data, k, stride, l_out)
    idx = cols.argmax(axis=-1)
    out = np.take_along_axis(cols, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dcols = np.zeros(cols.shape, dtype=g.dtype)
        np.put_along_axis(dcols, idx[..., None], g[..., None], axis=-1)
        return (_scatter_windows(dcols, length, stride),)

    return make_result(out, (x,), backward)


def avg_pool1d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    n, c, length = x.shape
    l_out = _check_geometry("avg_pool1d", length, k, stride, 0)
    cols = _windows(x.data, k, stride, l_out)

    def backward(g):
        dcols = np.broadcast_to(g[..., None] / k, cols.shape)
        return (_scatter_windows(np.ascontiguousarray(dcols), length, stride),)

    return make_result(cols.mean(axis=-1), (x,), backward)


def upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling along the length axis."""
    n, c, length = x.shape

    def backward(g):
        return (g.reshape(n, c, length, factor).sum(axis=-1),)

    return make_result(np.repeat(x.data, factor, axis=2), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, length = x.shape

    def backward(g):
        return (np.repeat(g[:, :, None] / length, length, axis=2),)

    return make_result(x.data.mean(axis=2), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ShapeError("concat: no inputs")
    ref = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: non-channel dims differ, {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return make_result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data[None, :]

    def backward(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)
