"""Reference integer interpreter.  int64 numpy holds exact int32 accumulators and the 64-bit requant products."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..graph import INPUT
from ..quant.params import rounding_shift
from .intgraph import IntGraph, IntGraphError, IntLayer


def _clamp(v, L: IntLayer) -> np.ndarray:
    return np.clip(v, L.qmin, L.qmax).astype(np.int8)


def _requant(acc, mn, L: IntLayer) -> np.ndarray:
    m, n = mn
    return _clamp(rounding_shift(np.asarray(acc, dtype=np.int64) * m, n) + L.zero_out, L)


def _conv(L: IntLayer, x: np.ndarray) -> np.ndarray:
    d = x.astype(np.int64) - L.zero_in[0]
    if L.padding:
        d = np.pad(d, ((0, 0), (0, 0), (L.padding, L.padding)))  # padding is the real zero: x == zero_in
    win = sliding_window_view(d, L.k, axis=2)[:, :, ::L.stride, :]  # [N, C, Lo, K]
    w = L.weight.astype(np.int64) - L.zero_w
    if L.groups == 1:
        acc = np.einsum("nclk,ock->nol", win, w)
    else:
        n, c, lo, k = win.shape
        g = L.groups
        win = win.reshape(n, g, c // g, lo, k)
        w = w.reshape(g, -1, c // g, k)
        acc = np.einsum("ngclk,gock->ngol", win, w).reshape(n, -1, lo)
    acc = acc + L.bias.astype(np.int64)[None, :, None]
    return _requant(acc, L.mult[0], L)


def _pool_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    return sliding_window_view(x, k, axis=2)[:, :, ::stride, :]


def run_layer(L: IntLayer, inputs: list[np.ndarray]) -> np.ndarray:
    """One integer layer on batched int8 inputs ([N, C, L] or [N, F])."""
    x = inputs[0]
    if L.kind == "conv":
        return _conv(L, x)
    if L.kind == "linear":
        d = x.astype(np.int64) - L.zero_in[0]
        acc = d @ (L.weight.astype(np.int64) - L.zero_w).T + L.bias.astype(np.int64)
        return _requant(acc, L.mult[0], L)
    if L.kind == "add":
        top = max(n for _, n in L.mult)
        acc = 0
        for t, z, (m, n) in zip(inputs, L.zero_in, L.mult):
            acc = acc + (t.astype(np.int64) - z) * m * (1 << (top - n))
        return _clamp(rounding_shift(acc, top) + L.zero_out, L)
    if L.kind == "concat":
        parts = [_requant(t.astype(np.int64) - z, mn, L) for t, z, mn in zip(inputs, L.zero_in, L.mult)]
        return np.concatenate(parts, axis=1)
    if L.kind == "maxpool":
        return _pool_windows(x, L.k, L.stride).max(axis=-1)
    if L.kind == "avgpool":
        s = (_pool_windows(x, L.k, L.stride).astype(np.int64) - L.zero_in[0]).sum(axis=-1)
        return _requant(s, L.mult[0], L)
    if L.kind == "gap":
        return _requant((x.astype(np.int64) - L.zero_in[0]).sum(axis=-1), L.mult[0], L)
    if L.kind == "upsample":
        return np.repeat(x, L.factor, axis=2)
    if L.kind == "identity":
        return x.copy()
    if L.kind == "relu":
        return np.maximum(x, np.int8(L.zero_in[0]))
    raise IntGraphError(f"{L.id}: no integer kernel for {L.kind!r}")


def run(ig: IntGraph, x: np.ndarray, trace: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Execute on a batch of int8 inputs; returns (int8 output, dequantized output)."""
    x = np.asarray(x)
    if x.dtype != np.int8:
        raise IntGraphError(f"integer graph input must be int8, got {x.dtype}")
    if tuple(x.shape[1:]) != tuple(ig.input_shape):
        raise IntGraphError(f"input shape {x.shape[1:]} does not match declared {tuple(ig.input_shape)}")
    acts = {INPUT: x}
    for L in ig.layers:
        acts[L.id] = run_layer(L, [acts[i] for i in L.inputs])
        if trace is not None:
            trace[L.id] = acts[L.id]
    out = acts[ig.output]
    return out, ig.dequantize_output(out)
