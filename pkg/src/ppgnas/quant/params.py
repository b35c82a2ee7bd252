"""Affine int8 quantization parameters and fixed-point requantization arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QMIN, QMAX = -128, 127
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


class QuantError(ValueError):
    pass


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int
    bits: int = 8

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise QuantError(f"scale must be positive and finite, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise QuantError(f"zero point {self.zero_point} outside [{QMIN}, {QMAX}]")

    def quantize(self, x) -> np.ndarray:
        q = np.rint(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.int8)

    def dequantize(self, q) -> np.ndarray:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point}


def minmax_affine_params(t) -> QuantParams:
    """Per-tensor min-max affine parameters (ties to even when rounding the zero point).

    The range is widened to contain 0 so the zero point always lands inside
    int8 and every value of the tensor is within half a step of the grid; a
    constant tensor therefore maps exactly (all-zero gets scale 1).
    """
    a = np.asarray(getattr(t, "data", t), dtype=np.float64)
    if a.size == 0:
        raise QuantError("cannot quantize an empty tensor")
    if not np.isfinite(a).all():
        raise QuantError("tensor contains NaN or Inf")
    lo, hi = min(float(a.min()), 0.0), max(float(a.max()), 0.0)
    if hi == lo:
        return QuantParams(1.0, 0)
    scale = (hi - lo) / 255.0
    zp = int(np.clip(np.rint(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def encode_multiplier(m0: float) -> tuple[int, int]:
    """Real multiplier -> (m, n) with m in [2**30, 2**31) and m0 ~= m * 2**-n.

    Multipliers >= 1 just get a smaller shift; shifts below zero are refused
    (they would need a left shift, which the integer kernels do not do).
    """
    if not (m0 > 0 and math.isfinite(m0)):
        raise QuantError(f"requantization multiplier must be positive, got {m0}")
    f, e = math.frexp(m0)  # m0 = f * 2**e, f in [0.5, 1)
    m = int(round(f * 2 ** 31))
    if m == 2 ** 31:  # f rounded up to 1.0
        m //= 2
        e += 1
    n = 31 - e
    if n < 0:
        raise QuantError(f"multiplier {m0} too large for a right-shift encoding")
    if n > 62:
        raise QuantError(f"multiplier {m0} too small to encode")
    return m, n


def rounding_shift(v, n: int):
    """``round(v / 2**n)`` with ties to even, on int64 arrays or Python ints.

    The shift is applied to the magnitude, so no negative value is ever
    right-shifted; ties-to-even is symmetric, so this equals rounding the
    signed quotient.
    """
    v = np.asarray(v, dtype=np.int64)
    if n == 0:
        return v
    sign = np.where(v < 0, -1, 1).astype(np.int64)
    a = np.abs(v)
    q = a >> n
    r = a & ((1 << n) - 1)
    half = np.int64(1) << (n - 1)
    q = q + ((r > half) | ((r == half) & (q & 1 == 1))).astype(np.int64)
    return sign * q


def requantize(acc, m: int, n: int, zero_out: int) -> np.ndarray:
    """int32 accumulator -> int8 via ``clamp(rounding_shift(acc * m, n) + zero_out)``."""
    prod = np.asarray(acc, dtype=np.int64) * np.int64(m)
    return np.clip(rounding_shift(prod, n) + zero_out, QMIN, QMAX).astype(np.int8)
