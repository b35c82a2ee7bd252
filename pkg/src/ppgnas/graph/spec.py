"""Typed 1D-CNN layer graph: specs, shape inference and cost accounting."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Iterable

KINDS = ("Conv1d", "DWBlock", "Identity", "ReLU", "BatchNorm", "MaxPool", "AvgPool", "Upsample", "Add",
         "Concat", "Linear", "GlobalAvgPool")

INPUT = "input"

Shape = tuple  # per-sample: (C, L) for series, (F,) after pooling/linear


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int = 0
    c_out: int = 0
    k: int = 1
    stride: int = 1
    padding: int = 0
    has_bias: bool = True
    factor: int = 2  # Upsample only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def conv(c_in, c_out, k, stride=1, padding=None, bias=True) -> LayerSpec:
    return LayerSpec("Conv1d", c_in, c_out, k, stride, k // 2 if padding is None else padding, bias)


def dw_block(c_in, c_out, k, stride=1, padding=None, bias=True) -> LayerSpec:
    return LayerSpec("DWBlock", c_in, c_out, k, stride, k // 2 if padding is None else padding, bias)


def param_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    """Trainable tensors a layer stores, in a fixed order."""
    k = spec.kind
    if k == "Conv1d":
        shapes = {"weight": (spec.c_out, spec.c_in, spec.k)}
        if spec.has_bias:
            shapes["bias"] = (spec.c_out,)
        return shapes
    if k == "DWBlock":
        shapes = {"dw_weight": (spec.c_in, 1, spec.k)}
        if spec.has_bias:
            shapes["dw_bias"] = (spec.c_in,)
        shapes["pw_weight"] = (spec.c_out, spec.c_in, 1)
        if spec.has_bias:
            shapes["pw_bias"] = (spec.c_out,)
        return shapes
    if k == "BatchNorm":
        return {"gamma": (spec.c_in,), "beta": (spec.c_in,)}
    if k == "Linear":
        shapes = {"weight": (spec.c_out, spec.c_in)}
        if spec.has_bias:
            shapes["bias"] = (spec.c_out,)
        return shapes
    return {}


def layer_param_count(spec: LayerSpec) -> int:
    b = spec.has_bias
    if spec.kind == "Conv1d":
        return spec.c_out * spec.c_in * spec.k + (spec.c_out if b else 0)
    if spec.kind == "DWBlock":
        return (spec.c_in * spec.k + (spec.c_in if b else 0)) + (spec.c_out * spec.c_in + (spec.c_out if b else 0))
    if spec.kind == "BatchNorm":
        return 2 * spec.c_in
    if spec.kind == "Linear":
        return spec.c_in * spec.c_out + (spec.c_out if b else 0)
    return 0


def _pool_len(length: int, k: int, stride: int) -> int:
    return (length - k) // stride + 1


def output_shape(spec: LayerSpec, in_shapes: list[Shape], where: str = "") -> Shape:
    """Shape rule of one layer; raises :class:`GraphError` on inconsistency."""
    kind = spec.kind
    tag = f"{where} ({kind})" if where else kind
    if kind in ("Add", "Concat"):
        if len(in_shapes) < 2:
            raise GraphError(f"{tag}: needs at least two inputs")
        if any(len(s) != 2 for s in in_shapes):
            raise GraphError(f"{tag}: inputs must be [C, L] series, got {in_shapes}")
        if kind == "Add":
            if any(s != in_shapes[0] for s in in_shapes):
                raise GraphError(f"{tag}: input shapes differ {in_shapes}")
            return in_shapes[0]
        if any(s[1] != in_shapes[0][1] for s in in_shapes):
            raise GraphError(f"{tag}: lengths differ {in_shapes}")
        return (sum(s[0] for s in in_shapes), in_shapes[0][1])
    if len(in_shapes) != 1:
        raise GraphError(f"{tag}: expects one input, got {len(in_shapes)}")
    s = in_shapes[0]
    if kind == "Identity" and (spec.c_in or spec.c_out):
        if spec.c_in != spec.c_out or (len(s) == 2 and s[0] != spec.c_in):
            raise GraphError(f"{tag}: identity needs equal input/output shapes ({spec.c_in} -> {spec.c_out})")
    if kind in ("Identity", "ReLU"):
        return s
    if kind == "Linear":
        if len(s) != 1 or s[0] != spec.c_in:
            raise GraphError(f"{tag}: expects [{spec.c_in}] features, got {list(s)}")
        return (spec.c_out,)
    if len(s) != 2:
        raise GraphError(f"{tag}: expects a [C, L] series, got {list(s)}")
    c, length = s
    if kind == "GlobalAvgPool":
        return (c,)
    if kind == "BatchNorm":
        if c != spec.c_in:
            raise GraphError(f"{tag}: {spec.c_in} channels declared, input has {c}")
        return s
    if kind in ("MaxPool", "AvgPool"):
        if spec.k > length:
            raise GraphError(f"{tag}: pool {spec.k} longer than input {length}")
        return (c, _pool_len(length, spec.k, spec.stride))
    if kind == "Upsample":
        return (c, length * spec.factor)
    # Conv1d / DWBlock
    if c != spec.c_in:
        raise GraphError(f"{tag}: {spec.c_in} input channels declared, input has {c}")
    if spec.stride < 1:
        raise GraphError(f"{tag}: stride must be >= 1")
    l_out = (length + 2 * spec.padding - spec.k) // spec.stride + 1
    if spec.k > length + 2 * spec.padding or l_out < 1:
        raise GraphError(f"{tag}: non-positive output length for input length {length}, k={spec.k}, "
                         f"stride={spec.stride}, padding={spec.padding}")
    return (spec.c_out, l_out)


@dataclass(frozen=True)
class Node:
    id: str
    spec: LayerSpec
    inputs: tuple[str, ...]


@dataclass(frozen=True)
class Graph:
    """Layer DAG whose node order is its (single) topological order."""

    nodes: tuple[Node, ...]
    input_shape: tuple[int, ...]
    output: str
    name: str = ""

    def __post_init__(self):
        seen = {INPUT}
        for n in self.nodes:
            if n.id in seen:
                raise GraphError(f"duplicate node id {n.id!r}")
            for i in n.inputs:
                if i not in seen:
                    raise GraphError(f"node {n.id!r} consumes {i!r} before it is defined (cycle or dangling edge)")
            seen.add(n.id)
        if self.output not in seen:
            raise GraphError(f"output {self.output!r} is not a node")
        self.shapes  # noqa: B018 - validate geometry eagerly

    @cached_property
    def shapes(self) -> dict[str, Shape]:
        shapes: dict[str, Shape] = {INPUT: tuple(self.input_shape)}
        for n in self.nodes:
            shapes[n.id] = output_shape(n.spec, [shapes[i] for i in n.inputs], n.id)
        return shapes

    @cached_property
    def by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> Node:
        return self.by_id[node_id]

    def consumers(self, node_id: str) -> list[str]:
        return [n.id for n in self.nodes if node_id in n.inputs]

    @property
    def output_shape(self) -> Shape:
        return self.shapes[self.output]

    def in_shape(self, node_id: str) -> Shape:
        return self.shapes[self.node(node_id).inputs[0]]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "output": self.output,
            "nodes": [{"id": n.id, "spec": n.spec.to_dict(), "inputs": list(n.inputs)} for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        nodes = tuple(Node(n["id"], LayerSpec(**n["spec"]), tuple(n["inputs"])) for n in d["nodes"])
        return cls(nodes, tuple(d["input_shape"]), d["output"], d.get("name", ""))

    def replace_nodes(self, nodes: Iterable[Node], output: str | None = None) -> "Graph":
        return Graph(tuple(nodes), self.input_shape, output or self.output, self.name)


def param_count(g: Graph) -> int:
    return sum(layer_param_count(n.spec) for n in g.nodes)


def layer_macs(spec: LayerSpec, in_shape: Shape, out_shape: Shape) -> int:
    if spec.kind == "Conv1d":
        return out_shape[1] * spec.c_out * spec.c_in * spec.k
    if spec.kind == "DWBlock":
        return out_shape[1] * spec.c_in * spec.k + out_shape[1] * spec.c_out * spec.c_in
    if spec.kind == "Linear":
        return spec.c_in * spec.c_out
    return 0


def mac_count(g: Graph) -> int:
    sh = g.shapes
    return sum(layer_macs(n.spec, sh[n.inputs[0]], sh[n.id]) for n in g.nodes)


def foldable_batchnorms(g: Graph) -> dict[str, str]:
    """BatchNorm id -> conv id for every BN that directly and exclusively follows a conv."""
    out = {}
    for n in g.nodes:
        if n.spec.kind != "BatchNorm":
            continue
        src = n.inputs[0]
        if src == INPUT:
            continue
        if g.node(src).spec.kind in ("Conv1d", "DWBlock") and g.consumers(src) == [n.id]:
            out[n.id] = src
    return out


def int8_size_bytes(g: Graph) -> int:
    """Deployed size: 1 byte per int8 weight, 4 per int32 bias.

    Every lowered conv/linear layer carries a bias vector (zeros when the
    float layer has none, folded BN shift otherwise).  A BatchNorm that cannot
    be folded becomes a per-channel k=1 depthwise layer.
    """
    folded = foldable_batchnorms(g)
    total = 0
    for n in g.nodes:
        s = n.spec
        if s.kind == "Conv1d":
            total += s.c_out * s.c_in * s.k + 4 * s.c_out
        elif s.kind == "DWBlock":
            total += s.c_in * s.k + 4 * s.c_in + s.c_out * s.c_in + 4 * s.c_out
        elif s.kind == "Linear":
            total += s.c_in * s.c_out + 4 * s.c_out
        elif s.kind == "BatchNorm" and n.id not in folded:
            total += s.c_in + 4 * s.c_in
    return total
