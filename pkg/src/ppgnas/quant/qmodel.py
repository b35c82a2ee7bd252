"""Lowered, quantization-ready model and quantization-aware fine-tuning.

Lowering folds BatchNorm into the preceding conv, splits depthwise-separable
blocks into a depthwise and a pointwise layer, turns stray BatchNorms into
per-channel k=1 depthwise layers, fuses a ReLU into its sole producer and
drops identities.  The result is the layer list that both the fake-quant
float simulation and the integer export operate on.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..graph import INPUT, Model, foldable_batchnorms
from ..graph.model import BN_EPS
from ..tensor import Adam, Tensor, no_grad, ops
from ..training import TaskData, run_epoch
from .fakequant import ALPHA_FLOOR, fake_quant, fake_quant_bias, fake_quant_mean, pact, pact_params
from .params import QuantParams, minmax_affine_params

log = logging.getLogger(__name__)

CALIB_PERCENTILE = 99.9


@dataclass
class ActQuant:
    alpha: Tensor
    signed: bool

    @classmethod
    def new(cls, signed: bool, alpha: float = 1.0) -> "ActQuant":
        return cls(Tensor(np.float32(alpha), requires_grad=True, dtype=np.float32), signed)

    def params(self) -> QuantParams:
        return pact_params(float(self.alpha.data), self.signed)


@dataclass
class QLayer:
    id: str
    kind: str  # conv | linear | add | concat | maxpool | avgpool | gap | upsample | relu | identity
    inputs: tuple[str, ...]
    out_shape: tuple[int, ...]
    k: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    factor: int = 2
    relu: bool = False
    weight: Tensor | None = None
    bias: Tensor | None = None
    act: ActQuant | None = None  # None: stays on the grid of inputs[0]


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=True, dtype=np.float32)


def _bn_affine(params, buffers):
    gamma = params["gamma"].data.astype(np.float64)
    beta = params["beta"].data.astype(np.float64)
    inv = gamma / np.sqrt(buffers["running_var"].astype(np.float64) + BN_EPS)
    return inv, beta - buffers["running_mean"].astype(np.float64) * inv


@dataclass
class QModel:
    layers: list[QLayer]
    input_shape: tuple[int, ...]
    output: str
    input_act: ActQuant
    meta: dict = field(default_factory=dict)

    def layer(self, lid: str) -> QLayer:
        for L in self.layers:
            if L.id == lid:
                return L
        raise KeyError(lid)

    def parameters(self) -> list[Tensor]:
        out = [self.input_act.alpha]
        for L in self.layers:
            out += [t for t in (L.weight, L.bias) if t is not None]
            if L.act is not None:
                out.append(L.act.alpha)
        return out

    def alphas(self) -> list[Tensor]:
        return [self.input_act.alpha] + [L.act.alpha for L in self.layers if L.act is not None]

    def act_params(self) -> dict[str, QuantParams]:
        """Grid of every tensor (network input included) under the current alphas."""
        params = {INPUT: self.input_act.params()}
        for L in self.layers:
            params[L.id] = L.act.params() if L.act is not None else params[L.inputs[0]]
        return params

    def weight_params(self, L: QLayer) -> QuantParams:
        return minmax_affine_params(L.weight.data)

    def bias_scale(self, L: QLayer, params: dict[str, QuantParams]) -> float:
        return params[L.inputs[0]].scale * self.weight_params(L).scale

    def _linear_part(self, L: QLayer, ins: list[Tensor], params: dict | None) -> Tensor:
        x = ins[0]
        if L.kind in ("conv", "linear"):
            w, b = L.weight, L.bias
            if params is not None:
                w = fake_quant(w, self.weight_params(L))
                b = fake_quant_bias(b, self.bias_scale(L, params))
            if L.kind == "linear":
                return ops.linear(x, w, b)
            if L.groups == 1:
                return ops.conv1d(x, w, b, L.stride, L.padding)
            return ops.depthwise_conv1d(x, w, b, L.stride, L.padding)
        if L.kind == "add":
            out = ins[0]
            for t in ins[1:]:
                out = ops.add(out, t)
            return out
        if L.kind == "concat":
            return ops.concat(ins, axis=1)
        if L.kind == "maxpool":
            return ops.max_pool1d(x, L.k, L.stride)
        if L.kind == "avgpool":
            return ops.avg_pool1d(x, L.k, L.stride)
        if L.kind == "gap":
            return ops.global_avg_pool(x)
        if L.kind == "upsample":
            return ops.upsample(x, L.factor)
        if L.kind == "relu":
            return ops.relu(x)
        if L.kind == "identity":
            return x
        raise ValueError(f"unknown lowered layer kind {L.kind!r}")

    def forward(self, x: Tensor, quantize: bool = True, trace: dict | None = None) -> Tensor:
        """Fake-quant simulation (``quantize=True``) or the plain folded float network.

        ``trace`` receives every layer's output; with ``quantize=False`` these
        are the pre-quantization values used for calibration.
        """
        params = self.act_params() if quantize else None
        if quantize:
            x = pact(x, self.input_act.alpha, signed=True)
        acts = {INPUT: x}
        if trace is not None:
            trace[INPUT] = x.data
        last_use = {}
        for i, L in enumerate(self.layers):
            for s in L.inputs:
                last_use[s] = i
        for i, L in enumerate(self.layers):
            y = self._linear_part(L, [acts[s] for s in L.inputs], params)
            if quantize:
                if L.act is not None:
                    y = pact(y, L.act.alpha, L.act.signed)
                elif L.kind in ("avgpool", "gap"):
                    y = fake_quant_mean(y, params[L.id], self.window(L))
            elif L.relu:
                y = ops.relu(y)
            acts[L.id] = y
            if trace is not None:
                trace[L.id] = y.data
            for s in L.inputs:
                if last_use[s] == i and s != self.output:
                    acts.pop(s, None)
        return acts[self.output]

    __call__ = forward

    def window(self, L: QLayer) -> int:
        """Averaging window of a pooling layer (the full input length for global pooling)."""
        if L.kind == "avgpool":
            return L.k
        src = L.inputs[0]
        return (self.input_shape if src == INPUT else self.layer(src).out_shape)[-1]

    def calibrate(self, x: np.ndarray, percentile: float = CALIB_PERCENTILE) -> None:
        """Set every alpha to a high percentile of the float activations it will clip."""
        trace: dict = {}
        with no_grad():
            self.forward(Tensor(x), quantize=False, trace=trace)

        def level(v, signed):
            v = np.abs(v) if signed else np.maximum(v, 0)
            return max(float(np.percentile(v, percentile)), ALPHA_FLOOR)

        self.input_act.alpha.data = np.float32(level(trace[INPUT], True))
        for L in self.layers:
            if L.act is not None:
                L.act.alpha.data = np.float32(level(trace[L.id], L.act.signed))


def lower(model: Model) -> QModel:
    g = model.graph
    folds = foldable_batchnorms(g)
    bn_of = {conv_id: bn_id for bn_id, conv_id in folds.items()}
    alias: dict[str, str] = {}
    nonneg = {INPUT: False}
    layers: list[QLayer] = []

    def res(i):
        while i in alias:
            i = alias[i]
        return i

    def fuse_relu(lid: str, out_id: str) -> bool:
        """Absorb the ReLU consuming ``out_id`` (its only consumer) into layer ``lid``."""
        cons = g.consumers(out_id)
        if out_id == g.output or len(cons) != 1 or g.node(cons[0]).spec.kind != "ReLU":
            return False
        alias[cons[0]] = lid
        return True

    def emit(L: QLayer, out_id: str, own_scale: bool = True, signed_hint: bool = True):
        if own_scale:
            L.relu = fuse_relu(L.id, out_id)
            signed = not L.relu and signed_hint
            L.act = ActQuant.new(signed)
            nonneg[L.id] = not signed
        else:
            nonneg[L.id] = L.kind == "relu" or nonneg[L.inputs[0]]
        if out_id != L.id:
            alias[out_id] = L.id
        layers.append(L)

    for n in g.nodes:
        if n.id in alias:
            continue  # a fused ReLU or folded BatchNorm
        s, p, ins = n.spec, model.params[n.id], tuple(res(i) for i in n.inputs)
        shape = g.shapes[n.id]
        if s.kind in ("Conv1d", "DWBlock", "BatchNorm", "Linear"):
            src = ins
            if s.kind == "DWBlock":
                dw_id = f"{n.id}.dw"
                c = s.c_in
                dw_b = p["dw_bias"].data if "dw_bias" in p else np.zeros(c)
                emit(QLayer(dw_id, "conv", ins, (c, shape[1]), s.k, s.stride, s.padding, groups=c,
                            weight=_t(p["dw_weight"].data), bias=_t(dw_b)), dw_id)
                src = (dw_id,)
                w = p["pw_weight"].data.astype(np.float64)
                b = p["pw_bias"].data.astype(np.float64) if "pw_bias" in p else np.zeros(s.c_out)
                geom = dict(k=1, stride=1, padding=0, groups=1)
            elif s.kind == "BatchNorm":
                inv, shift = _bn_affine(p, model.buffers[n.id])
                w, b = inv.reshape(-1, 1, 1), shift
                geom = dict(k=1, stride=1, padding=0, groups=s.c_in)
            else:
                w = p["weight"].data.astype(np.float64)
                b = p["bias"].data.astype(np.float64) if "bias" in p else np.zeros(s.c_out)
                geom = dict(k=s.k, stride=s.stride, padding=s.padding, groups=1)
            out_id = n.id
            if n.id in bn_of:
                bn = bn_of[n.id]
                inv, shift = _bn_affine(model.params[bn], model.buffers[bn])
                w = w * inv.reshape(-1, *([1] * (w.ndim - 1)))
                b = b * inv + shift
                out_id = bn
            kind = "linear" if s.kind == "Linear" else "conv"
            emit(QLayer(n.id, kind, src, shape, weight=_t(w), bias=_t(b), **geom), out_id)
        elif s.kind == "Identity":
            alias[n.id] = ins[0]
        elif s.kind in ("Add", "Concat"):
            emit(QLayer(n.id, s.kind.lower(), ins, shape), n.id,
                 signed_hint=not all(nonneg[i] for i in ins))
        else:
            kind = {"ReLU": "relu", "MaxPool": "maxpool", "AvgPool": "avgpool", "GlobalAvgPool": "gap",
                    "Upsample": "upsample"}[s.kind]
            emit(QLayer(n.id, kind, ins, shape, k=s.k, stride=s.stride, factor=s.factor), n.id, own_scale=False)
    if res(g.output) == INPUT:  # the whole network is a pass-through
        layers.append(QLayer("identity", "identity", (INPUT,), tuple(g.input_shape)))
        alias[g.output] = "identity"
    meta = {**model.meta, "source_graph": g.name}
    return QModel(layers, tuple(g.input_shape), res(g.output), ActQuant.new(True), meta)


class _AlphaFlooredAdam(Adam):
    def __init__(self, params, lr, alphas):
        super().__init__(params, lr=lr)
        self._alphas = alphas

    def step(self) -> None:
        super().step()
        for a in self._alphas:
            a.data = np.maximum(a.data, np.float32(ALPHA_FLOOR))


def qat_finetune(model: Model, train: TaskData, epochs: int = 5, lr: float = 1e-4, batch_size: int = 128,
                 seed: int = 0, calib_size: int = 256) -> QModel:
    """Lower, calibrate alphas on training windows, then fine-tune through fake quantization."""
    qm = lower(model)
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(train))[:calib_size]
    qm.calibrate(train.x[np.sort(idx)])
    opt = _AlphaFlooredAdam(qm.parameters(), lr, qm.alphas())

    def loss_fn(x, y):
        return ops.mse_loss(qm.forward(x), y)

    for epoch in range(epochs):
        loss = run_epoch(loss_fn, opt, train, batch_size, rng, "quantization-aware training")
        log.debug("qat epoch %d loss %.6f", epoch, loss)
    return qm
