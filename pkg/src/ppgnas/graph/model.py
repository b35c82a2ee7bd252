"""Executable float model: a :class:`Graph` plus its trained tensors."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..tensor import Tensor, kaiming_uniform, ops
from .spec import INPUT, Graph, LayerSpec, param_shapes

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def init_layer_params(spec: LayerSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    """Kaiming-uniform weights, zero biases, BN at identity."""
    params = {}
    for name, shape in param_shapes(spec).items():
        if name in ("weight", "dw_weight", "pw_weight"):
            fan_in = int(np.prod(shape[1:]))
            data = kaiming_uniform(rng, shape, fan_in)
        elif name == "gamma":
            data = np.ones(shape, dtype=np.float32)
        else:
            data = np.zeros(shape, dtype=np.float32)
        params[name] = Tensor(data, requires_grad=True, dtype=np.float32)
    return params


def init_layer_buffers(spec: LayerSpec) -> dict[str, np.ndarray]:
    if spec.kind == "BatchNorm":
        return {"running_mean": np.zeros(spec.c_in, np.float32), "running_var": np.ones(spec.c_in, np.float32)}
    return {}


def apply_layer(spec: LayerSpec, params: dict[str, Tensor], buffers: dict[str, np.ndarray], inputs: list[Tensor],
                training: bool = False, update_stats: bool = True) -> Tensor:
    k = spec.kind
    x = inputs[0]
    if k == "Conv1d":
        return ops.conv1d(x, params["weight"], params.get("bias"), spec.stride, spec.padding)
    if k == "DWBlock":
        h = ops.depthwise_conv1d(x, params["dw_weight"], params.get("dw_bias"), spec.stride, spec.padding)
        return ops.conv1d(h, params["pw_weight"], params.get("pw_bias"), 1, 0)
    if k == "Identity":
        return x
    if k == "ReLU":
        return ops.relu(x)
    if k == "BatchNorm":
        return ops.batch_norm(x, params["gamma"], params["beta"], buffers["running_mean"], buffers["running_var"],
                              training, BN_MOMENTUM, BN_EPS, update_stats)
    if k == "MaxPool":
        return ops.max_pool1d(x, spec.k, spec.stride)
    if k == "AvgPool":
        return ops.avg_pool1d(x, spec.k, spec.stride)
    if k == "Upsample":
        return ops.upsample(x, spec.factor)
    if k == "Add":
        out = inputs[0]
        for t in inputs[1:]:
            out = ops.add(out, t)
        return out
    if k == "Concat":
        return ops.concat(inputs, axis=1)
    if k == "Linear":
        return ops.linear(x, params["weight"], params.get("bias"))
    if k == "GlobalAvgPool":
        return ops.global_avg_pool(x)
    raise ValueError(f"no forward rule for {k}")


def execute(graph: Graph, x: Tensor, node_fn: Callable[[str, list[Tensor]], Tensor]) -> Tensor:
    """Run ``graph`` in node order, freeing activations after their last use."""
    if tuple(x.shape[1:]) != tuple(graph.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match declared {tuple(graph.input_shape)}")
    last_use: dict[str, int] = {}
    for i, n in enumerate(graph.nodes):
        for src in n.inputs:
            last_use[src] = i
    acts: dict[str, Tensor] = {INPUT: x}
    for i, n in enumerate(graph.nodes):
        acts[n.id] = node_fn(n.id, [acts[s] for s in n.inputs])
        for src in n.inputs:
            if last_use[src] == i and src != graph.output:
                acts.pop(src, None)
    return acts[graph.output]


class Model:
    """Float model.  ``meta`` carries target normalization and provenance."""

    def __init__(self, graph: Graph, params: dict[str, dict[str, Tensor]], buffers: dict[str, dict[str, np.ndarray]],
                 meta: dict | None = None):
        self.graph = graph
        self.params = params
        self.buffers = buffers
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, graph: Graph, seed: int = 0, meta: dict | None = None) -> "Model":
        rng = np.random.default_rng(seed)
        params = {n.id: init_layer_params(n.spec, rng) for n in graph.nodes}
        buffers = {n.id: init_layer_buffers(n.spec) for n in graph.nodes}
        return cls(graph, params, buffers, meta)

    def forward(self, x: Tensor, training: bool = False, update_stats: bool = True) -> Tensor:
        def node_fn(node_id, inputs):
            n = self.graph.node(node_id)
            return apply_layer(n.spec, self.params[node_id], self.buffers[node_id], inputs, training, update_stats)

        return execute(self.graph, x, node_fn)

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return [t for n in self.graph.nodes for t in self.params[n.id].values()]

    def stored_scalars(self) -> int:
        """Count of trainable scalars actually held (enumeration oracle for param_count)."""
        return sum(int(t.data.size) for t in self.parameters())

    def copy(self) -> "Model":
        params = {nid: {k: Tensor(t.data.copy(), requires_grad=True, dtype=t.data.dtype) for k, t in p.items()}
                  for nid, p in self.params.items()}
        buffers = {nid: {k: v.copy() for k, v in b.items()} for nid, b in self.buffers.items()}
        return Model(self.graph, params, buffers, self.meta)
