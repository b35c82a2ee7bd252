"""Central finite-difference gradient checking (float64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, float64_mode, no_grad


def _project(out: Tensor, proj: np.ndarray):
    from . import ops
    return ops.sum(ops.mul(out, proj))


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], proj: np.ndarray,
                 h: float = 1e-3) -> list[np.ndarray]:
    grads = []
    with float64_mode(), no_grad():
        for i, base in enumerate(arrays):
            g = np.zeros_like(base, dtype=np.float64)
            for j in np.ndindex(base.shape):
                vals = []
                for sign in (1.0, -1.0):
                    pert = [a.astype(np.float64).copy() for a in arrays]
                    pert[i][j] += sign * h
                    out = fn(*[Tensor(a) for a in pert])
                    vals.append(float((out.data * proj).sum()))
                g[j] = (vals[0] - vals[1]) / (2 * h)
            grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def gradcheck(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-3, seed: int = 0,
              reference: Callable[..., Tensor] | None = None) -> float:
    """Max relative error between backward() and central differences.

    The output is contracted with a fixed random projection so every output
    element contributes.  ``reference`` replaces ``fn`` on the numeric side;
    it is how straight-through estimators are checked against the surrogate
    they stand in for.
    """
    rng = np.random.default_rng(seed)
    with float64_mode():
        ts = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
        out = fn(*ts)
        proj = rng.standard_normal(out.shape)
        _project(out, proj).backward()
        analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in ts]
    numeric = numeric_grad(reference or fn, arrays, proj, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
