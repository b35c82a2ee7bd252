"""SuperNet: conv positions become softmax-weighted mixtures of {C, DW, ID}."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import INPUT, Graph, LayerSpec, Model, Node, apply_layer, execute, layer_param_count
from ..graph.model import init_layer_buffers, init_layer_params
from ..tensor import Tensor, ops

ONE_HOT_MARGIN = 1000.0  # exp(-1000) underflows to exactly 0 in float64


class NasError(ValueError):
    pass


@dataclass
class ChoiceBlock:
    node_id: str
    labels: tuple[str, ...]
    alternatives: tuple[LayerSpec, ...]
    theta: Tensor
    alt_params: list[dict[str, Tensor]]
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]

    @property
    def costs(self) -> np.ndarray:
        return np.array([layer_param_count(a) for a in self.alternatives], dtype=np.float64)

    def probs(self) -> np.ndarray:
        z = self.theta.data.astype(np.float64)
        e = np.exp(z - z.max())
        return e / e.sum()

    def selected(self) -> int:
        """Argmax of theta; exact ties go to the cheapest alternative."""
        th = self.theta.data
        tied = np.flatnonzero(th == th.max())
        return int(min(tied, key=lambda i: (self.costs[i], i)))


def mixture_forward(block: ChoiceBlock, x: Tensor) -> Tensor:
    if tuple(x.shape[1:]) != tuple(block.in_shape):
        raise NasError(f"choice block {block.node_id}: input {x.shape[1:]} != expected {block.in_shape}")
    outs = [apply_layer(spec, params, {}, [x]) for spec, params in zip(block.alternatives, block.alt_params)]
    return ops.weighted_sum(ops.softmax(block.theta), outs)


class SuperNet:
    def __init__(self, graph: Graph, blocks: dict[str, ChoiceBlock], params: dict, buffers: dict,
                 meta: dict | None = None):
        self.graph = graph
        self.blocks = blocks
        self.params = params
        self.buffers = buffers
        self.meta = dict(meta or {})

    def forward(self, x: Tensor, training: bool = False, update_stats: bool = True) -> Tensor:
        def node_fn(node_id, inputs):
            if node_id in self.blocks:
                return mixture_forward(self.blocks[node_id], inputs[0])
            spec = self.graph.node(node_id).spec
            return apply_layer(spec, self.params[node_id], self.buffers[node_id], inputs, training, update_stats)

        return execute(self.graph, x, node_fn)

    __call__ = forward

    def weight_params(self) -> list[Tensor]:
        out = []
        for n in self.graph.nodes:
            if n.id in self.blocks:
                for p in self.blocks[n.id].alt_params:
                    out.extend(p.values())
            else:
                out.extend(self.params[n.id].values())
        return out

    def theta_params(self) -> list[Tensor]:
        return [b.theta for b in self.blocks.values()]

    def fixed_cost(self) -> int:
        return sum(layer_param_count(n.spec) for n in self.graph.nodes if n.id not in self.blocks)

    def selection(self) -> dict[str, int]:
        return {nid: b.selected() for nid, b in self.blocks.items()}

    def set_selection(self, selection: dict[str, int | str], margin: float = ONE_HOT_MARGIN) -> None:
        """Force one-hot logits (``margin`` on the chosen alternative, 0 elsewhere)."""
        for nid, choice in selection.items():
            b = self.blocks[nid]
            i = b.labels.index(choice) if isinstance(choice, str) else int(choice)
            th = np.zeros(len(b.alternatives), dtype=b.theta.data.dtype)
            th[i] = margin
            b.theta.data = th


def expand_to_supernet(seed, rng_seed: int = 0) -> SuperNet:
    """Replace every Conv1d of ``seed`` (a Graph or trained Model) by a choice block.

    With a Model, the C alternative and all fixed layers start from its weights;
    DW alternatives are always freshly initialized.
    """
    model = seed if isinstance(seed, Model) else None
    graph = seed.graph if model is not None else seed
    rng = np.random.default_rng(rng_seed)
    blocks, params, buffers = {}, {}, {}
    for n in graph.nodes:
        if n.spec.kind != "Conv1d":
            params[n.id] = model.params[n.id] if model else init_layer_params(n.spec, rng)
            buffers[n.id] = model.buffers[n.id] if model else init_layer_buffers(n.spec)
            continue
        s = n.spec
        in_shape, out_shape = graph.shapes[n.inputs[0]], graph.shapes[n.id]
        labels, alts = ["C", "DW"], [s, LayerSpec("DWBlock", s.c_in, s.c_out, s.k, s.stride, s.padding, s.has_bias)]
        if in_shape == out_shape:
            labels.append("ID")
            alts.append(LayerSpec("Identity", s.c_in, s.c_out))
        alt_params = [init_layer_params(a, rng) for a in alts]
        if model is not None:
            alt_params[0] = model.params[n.id]
        theta = Tensor(np.zeros(len(alts), dtype=np.float32), requires_grad=True, dtype=np.float32)
        blocks[n.id] = ChoiceBlock(n.id, tuple(labels), tuple(alts), theta, alt_params, in_shape, out_shape)
    if not blocks:
        raise NasError("seed graph has no Conv1d layer to search over")
    meta = dict(model.meta) if model else {}
    return SuperNet(graph, blocks, params, buffers, meta)


def expected_cost(sn: SuperNet) -> Tensor:
    """Softmax-weighted parameter count, differentiable in every block's theta."""
    total = Tensor(np.float64(sn.fixed_cost()), dtype=np.float64)
    for b in sn.blocks.values():
        total = ops.add(total, ops.dot_const(ops.softmax(ops.cast(b.theta, np.float64)), b.costs))
    return total


def nas_loss(pred: Tensor, target, cost: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise NasError(f"regularization strength must be non-negative, got {lam}")
    task = ops.mse_loss(pred, target)
    if lam == 0:
        return task
    return ops.add(task, ops.mul(cost, float(lam)))


def discretize(sn: SuperNet, selection: dict[str, int] | None = None) -> Model:
    """Keep each block's argmax alternative (with its weights); ID choices are spliced out.

    After splicing, a ReLU fed directly by another ReLU is redundant and is
    removed as well.
    """
    selection = selection or sn.selection()
    alias: dict[str, str] = {}
    kinds: dict[str, str] = {INPUT: "input"}

    def resolve(i: str) -> str:
        while i in alias:
            i = alias[i]
        return i

    nodes, params, buffers = [], {}, {}
    for n in sn.graph.nodes:
        inputs = tuple(resolve(i) for i in n.inputs)
        if n.id in sn.blocks:
            b = sn.blocks[n.id]
            i = selection[n.id]
            if b.labels[i] == "ID":
                alias[n.id] = inputs[0]
                continue
            spec, p = b.alternatives[i], b.alt_params[i]
            buf = {}
        else:
            spec, p, buf = n.spec, sn.params[n.id], sn.buffers[n.id]
            if spec.kind == "ReLU" and kinds.get(inputs[0]) == "ReLU":
                alias[n.id] = inputs[0]
                continue
        nodes.append(Node(n.id, spec, inputs))
        kinds[n.id] = spec.kind
        params[n.id] = {k: Tensor(t.data.copy(), requires_grad=True, dtype=t.data.dtype) for k, t in p.items()}
        buffers[n.id] = {k: v.copy() for k, v in buf.items()}
    graph = Graph(tuple(nodes), sn.graph.input_shape, resolve(sn.graph.output), sn.graph.name)
    meta = {**sn.meta, "selection": {nid: sn.blocks[nid].labels[i] for nid, i in selection.items()}}
    return Model(graph, params, buffers, meta)
