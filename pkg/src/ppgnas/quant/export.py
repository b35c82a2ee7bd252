"""Lowered fake-quant model -> integer-only graph."""
from __future__ import annotations

import numpy as np

from ..graph import INPUT
from ..runtime.intgraph import IntGraph, IntLayer
from .params import INT32_MAX, INT32_MIN, QMIN, QuantError, encode_multiplier
from .qmodel import QModel


def export_int_graph(qm: QModel) -> IntGraph:
    """Freeze every grid of ``qm`` into integers.

    Requantization multipliers: conv/linear ``s_in*s_w/s_out``, add/concat
    ``s_i/s_out`` per input, avg pools ``1/window``.  Signed activation grids
    clamp to [-127, 127] so they match the symmetric simulated clip.
    """
    params = qm.act_params()
    layers = []
    for L in qm.layers:
        p_in = [params[i] for i in L.inputs]
        p_out = params[L.id]
        qmin = -127 if (L.act is not None and L.act.signed) else QMIN
        common = dict(zero_in=tuple(p.zero_point for p in p_in), zero_out=p_out.zero_point, qmin=qmin)
        if L.kind in ("conv", "linear"):
            wq = qm.weight_params(L)
            s_b = p_in[0].scale * wq.scale
            bias = np.clip(np.rint(L.bias.data.astype(np.float64) / s_b), INT32_MIN, INT32_MAX).astype(np.int32)
            layers.append(IntLayer(L.id, L.kind, L.inputs, L.out_shape, k=L.k, stride=L.stride, padding=L.padding,
                                   groups=L.groups, weight=wq.quantize(L.weight.data), bias=bias,
                                   zero_w=wq.zero_point, mult=(encode_multiplier(s_b / p_out.scale),), **common))
        elif L.kind in ("add", "concat"):
            mult = tuple(encode_multiplier(p.scale / p_out.scale) for p in p_in)
            layers.append(IntLayer(L.id, L.kind, L.inputs, L.out_shape, mult=mult, **common))
        elif L.kind in ("avgpool", "gap"):
            window = qm.window(L)
            layers.append(IntLayer(L.id, L.kind, L.inputs, L.out_shape, k=L.k, stride=L.stride,
                                   mult=(encode_multiplier(1.0 / window),), **common))
        elif L.kind in ("maxpool", "upsample", "relu", "identity"):
            layers.append(IntLayer(L.id, L.kind, L.inputs, L.out_shape, k=L.k, stride=L.stride, factor=L.factor,
                                   **common))
        else:
            raise QuantError(f"cannot export layer kind {L.kind!r}")
    return IntGraph(layers, qm.input_shape, params[INPUT], qm.output, params, input_signed=True,
                    meta=dict(qm.meta))

