"""Integer-only graph: int8 weights, int32 biases, normalized multipliers and zero points."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..graph import INPUT
from ..graph.serialize import pack, unpack, write_atomic
from ..quant.params import INT32_MAX, QMAX, QMIN, QuantParams

INTGRAPH_MAGIC = b"PPGNASI\0"
INTGRAPH_VERSION = 1
INT_KINDS = ("conv", "linear", "add", "concat", "maxpool", "avgpool", "gap", "upsample", "relu", "identity")
MAX_TERM_SHIFT = 20  # add layers align terms by at most this many bits


class IntGraphError(ValueError):
    pass


@dataclass
class IntLayer:
    id: str
    kind: str
    inputs: tuple[str, ...]
    out_shape: tuple[int, ...]
    zero_in: tuple[int, ...]
    zero_out: int
    k: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    factor: int = 2
    weight: np.ndarray | None = None  # int8, conv [Co, Ci/g, K] / linear [O, F]
    bias: np.ndarray | None = None  # int32 [Co]
    zero_w: int = 0
    mult: tuple[tuple[int, int], ...] = ()  # (m, n) per requantized input
    qmin: int = QMIN
    qmax: int = QMAX

    def header(self) -> dict:
        return {"id": self.id, "kind": self.kind, "inputs": list(self.inputs), "out_shape": list(self.out_shape),
                "zero_in": list(self.zero_in), "zero_out": self.zero_out, "k": self.k, "stride": self.stride,
                "padding": self.padding, "groups": self.groups, "factor": self.factor, "zero_w": self.zero_w,
                "mult": [list(mn) for mn in self.mult], "qmin": self.qmin, "qmax": self.qmax}


@dataclass
class IntGraph:
    layers: list[IntLayer]
    input_shape: tuple[int, ...]
    input_q: QuantParams
    output: str
    scales: dict[str, QuantParams]  # grid of every tensor, for dequantization
    input_signed: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # -- structure -----------------------------------------------------------
    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {INPUT: tuple(self.input_shape)}
        for L in self.layers:
            out[L.id] = tuple(L.out_shape)
        return out

    def layer(self, lid: str) -> IntLayer:
        for L in self.layers:
            if L.id == lid:
                return L
        raise KeyError(lid)

    @property
    def output_q(self) -> QuantParams:
        return self.scales[self.output]

    def validate(self) -> None:
        """Structural checks plus the worst-case int32 accumulator bound of every layer."""
        seen = {INPUT}
        shapes = {INPUT: tuple(self.input_shape)}
        for L in self.layers:
            if L.kind not in INT_KINDS:
                raise IntGraphError(f"{L.id}: unknown kind {L.kind!r}")
            if L.id in seen:
                raise IntGraphError(f"{L.id}: duplicate layer id")
            for i in L.inputs:
                if i not in seen:
                    raise IntGraphError(f"{L.id}: input {i!r} is not produced earlier (graph must be acyclic)")
            if len(L.zero_in) != len(L.inputs):
                raise IntGraphError(f"{L.id}: one input zero point per input required")
            for m, n in L.mult:
                if not (2 ** 30 <= m < 2 ** 31) or not 0 <= n <= 62:
                    raise IntGraphError(f"{L.id}: multiplier ({m}, {n}) is not normalized")
            if not (QMIN <= L.qmin <= L.qmax <= QMAX and QMIN <= L.zero_out <= QMAX):
                raise IntGraphError(f"{L.id}: zero point or clamp range outside int8")
            if L.kind in ("conv", "linear"):
                self._check_accumulator(L, shapes[L.inputs[0]])
            if L.kind == "add":
                self._check_add(L)
            seen.add(L.id)
            shapes[L.id] = tuple(L.out_shape)
        if self.output not in seen:
            raise IntGraphError(f"output {self.output!r} is not a layer")

    @staticmethod
    def _check_accumulator(L: IntLayer, in_shape) -> None:
        if L.weight is None or L.bias is None or L.weight.dtype != np.int8 or L.bias.dtype != np.int32:
            raise IntGraphError(f"{L.id}: needs int8 weights and int32 bias")
        if len(L.mult) != 1:
            raise IntGraphError(f"{L.id}: needs exactly one requantization multiplier")
        c_in = in_shape[0]
        if L.kind == "conv" and L.weight.shape[1] * L.groups != c_in:
            raise IntGraphError(f"{L.id}: weight expects {L.weight.shape[1] * L.groups} channels, input has {c_in}")
        w = np.abs(L.weight.astype(np.int64) - L.zero_w).reshape(L.weight.shape[0], -1).sum(axis=1)
        x_span = max(abs(QMIN - L.zero_in[0]), abs(QMAX - L.zero_in[0]))
        worst = w * x_span + np.abs(L.bias.astype(np.int64))
        if worst.max() > INT32_MAX:
            raise IntGraphError(f"{L.id}: worst-case accumulator {int(worst.max())} overflows int32 "
                                f"(fan-in {L.weight[0].size}); split the layer or reduce its fan-in")

    @staticmethod
    def _check_add(L: IntLayer) -> None:
        top = max(n for _, n in L.mult)
        if top - min(n for _, n in L.mult) > MAX_TERM_SHIFT or len(L.inputs) > 8:
            raise IntGraphError(f"{L.id}: input scales too far apart to align in 64 bits")

    # -- I/O -----------------------------------------------------------------
    def quantize_input(self, x) -> np.ndarray:
        """Float network input -> int8, clipping exactly like the simulated input quantizer."""
        q = self.input_q
        span = q.scale * (127 if self.input_signed else 255)
        lo = -span if self.input_signed else 0.0
        c = np.clip(np.asarray(x, dtype=np.float64), lo, span)
        return (np.rint(c / q.scale) + q.zero_point).astype(np.int8)

    def dequantize_output(self, q) -> np.ndarray:
        return self.output_q.dequantize(q)

    def to_bytes(self) -> bytes:
        arrays = {}
        for L in self.layers:
            if L.weight is not None:
                arrays[f"{L.id}/weight"] = L.weight
                arrays[f"{L.id}/bias"] = L.bias
        doc = {"input_shape": list(self.input_shape), "input_q": self.input_q.to_dict(),
               "input_signed": self.input_signed, "output": self.output,
               "scales": {k: v.to_dict() for k, v in self.scales.items()}, "meta": self.meta,
               "layers": [L.header() for L in self.layers]}
        return pack(INTGRAPH_MAGIC, doc, list(arrays.items()), INTGRAPH_VERSION)

    @classmethod
    def from_bytes(cls, data: bytes) -> "IntGraph":
        doc, arrays = unpack(INTGRAPH_MAGIC, data, INTGRAPH_VERSION)
        layers = []
        for h in doc["layers"]:
            layers.append(IntLayer(
                h["id"], h["kind"], tuple(h["inputs"]), tuple(h["out_shape"]), tuple(h["zero_in"]), h["zero_out"],
                h["k"], h["stride"], h["padding"], h["groups"], h["factor"], arrays.get(f"{h['id']}/weight"),
                arrays.get(f"{h['id']}/bias"), h["zero_w"], tuple(tuple(mn) for mn in h["mult"]), h["qmin"],
                h["qmax"]))
        scales = {k: QuantParams(v["scale"], v["zero_point"]) for k, v in doc["scales"].items()}
        return cls(layers, tuple(doc["input_shape"]), QuantParams(**doc["input_q"]), doc["output"], scales,
                   doc["input_signed"], doc.get("meta", {}))

    def save(self, path) -> None:
        write_atomic(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path) -> "IntGraph":
        return cls.from_bytes(Path(path).read_bytes())
