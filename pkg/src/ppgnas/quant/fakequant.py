"""Differentiable fake quantization: weights (min-max affine), activations (PaCT), biases."""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor
from ..tensor.tensor import make_result
from .params import INT32_MAX, INT32_MIN, QMAX, QMIN, QuantParams, encode_multiplier, rounding_shift

ALPHA_FLOOR = 1e-3


def fake_quant(x: Tensor, q: QuantParams) -> Tensor:
    """Quantize-dequantize with a straight-through gradient inside the clamp range."""
    u = x.data.astype(np.float64) / q.scale
    v = u + q.zero_point
    r = np.clip(np.rint(u) + q.zero_point, QMIN, QMAX)  # round, then shift: same order as the integer path
    out = ((r - q.zero_point) * q.scale).astype(x.data.dtype)
    inside = (v >= QMIN) & (v <= QMAX)

    def backward(g):
        return (g * inside,)

    return make_result(out, (x,), backward)


def fake_quant_mean(x: Tensor, q: QuantParams, window: int) -> Tensor:
    """Fake-quantize a window mean of on-grid values exactly as the integer kernel rounds it.

    The integer runtime sums ``window`` grid levels and scales by the encoded
    multiplier of ``1/window``; mirroring that here (ties included) keeps the
    simulation bit-identical to the integer average pools.  Gradient is
    straight-through.
    """
    u = x.data.astype(np.float64) / q.scale
    sums = np.rint(u * window).astype(np.int64)  # exact level sums: inputs sit on the grid
    m, n = encode_multiplier(1.0 / window)
    r = np.clip(rounding_shift(sums * m, n) + q.zero_point, QMIN, QMAX)
    out = ((r - q.zero_point) * q.scale).astype(x.data.dtype)

    def backward(g):
        return (g,)

    return make_result(out, (x,), backward)


def fake_quant_bias(b: Tensor, scale: float) -> Tensor:
    """Round a bias onto the int32 grid of ``scale`` (the product of input and weight scales)."""
    r = np.clip(np.rint(b.data.astype(np.float64) / scale), INT32_MIN, INT32_MAX)

    def backward(g):
        return (g,)

    return make_result((r * scale).astype(b.data.dtype), (b,), backward)


def pact_params(alpha: float, signed: bool = False) -> QuantParams:
    """Unsigned PaCT spans [0, alpha] on levels -128..127; signed spans [-alpha, alpha] on -127..127."""
    alpha = max(float(alpha), ALPHA_FLOOR)
    return QuantParams(alpha / 127.0, 0) if signed else QuantParams(alpha / 255.0, QMIN)


def pact(x: Tensor, alpha: Tensor, signed: bool = False) -> Tensor:
    """Clip to [0, alpha] (or [-alpha, alpha]) and fake-quantize on the alpha grid.

    Straight-through gradients: d/dx is 1 strictly inside the clip range,
    d/dalpha is 1 where x >= alpha (and -1 where x <= -alpha when signed).
    """
    a = float(alpha.data)
    q = pact_params(a, signed)
    a = q.scale * (127.0 if signed else 255.0)  # floored alpha
    lo = -a if signed else 0.0
    xd = x.data.astype(np.float64)
    clipped = np.clip(xd, lo, a)
    out = (np.rint(clipped / q.scale) * q.scale).astype(x.data.dtype)
    inside = (xd > lo) & (xd < a)
    d_alpha = (xd >= a).astype(np.float64)
    if signed:
        d_alpha -= (xd <= lo)

    def backward(g):
        return g * inside, np.asarray((g * d_alpha).sum(), dtype=alpha.data.dtype).reshape(alpha.shape)

    return make_result(out, (x, alpha), backward)
