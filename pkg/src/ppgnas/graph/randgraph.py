"""Random valid graphs for property tests, the self-test and the acceptance suite."""
from __future__ import annotations

import numpy as np

from .spec import INPUT, Graph, LayerSpec, Node


def _prune(nodes: list[Node], output: str) -> list[Node]:
    live = {output}
    for n in reversed(nodes):
        if n.id in live:
            live.update(n.inputs)
    return [n for n in nodes if n.id in live]


def random_graph(rng: np.random.Generator, n_ops: int | None = None, max_channels: int = 8,
                 head: str | None = None) -> Graph:
    """A random DAG over every layer kind; always contains at least one Conv1d.

    ``head`` is "scalar" (GAP + Linear to one output), "series" (1x1 conv to
    one channel) or None for a random choice.
    """
    c0 = int(rng.integers(1, 4))
    length = int(rng.choice([16, 24, 32, 40]))
    n_ops = int(rng.integers(3, 9)) if n_ops is None else n_ops
    nodes: list[Node] = []
    shapes: dict[str, tuple[int, int]] = {INPUT: (c0, length)}
    recent = [INPUT]

    def add(spec: LayerSpec, inputs: tuple[str, ...], shape):
        nid = f"r{len(nodes)}"
        nodes.append(Node(nid, spec, inputs))
        shapes[nid] = shape
        recent.append(nid)
        return nid

    def pick():
        # bias toward the newest tensors so graphs stay mostly connected
        i = len(recent) - 1 - min(int(rng.geometric(0.6)) - 1, len(recent) - 1)
        return recent[i]

    def add_conv(src, kind=None):
        c, L = shapes[src]
        kind = kind or ("Conv1d" if rng.random() < 0.6 else "DWBlock")
        k = int(rng.choice([1, 3, 5]))
        stride = 2 if (L >= 8 and rng.random() < 0.25) else 1
        c_out = int(rng.integers(1, max_channels + 1))
        if rng.random() < 0.3:
            c_out = c  # shape-preserving, so NAS can offer ID here
        spec = LayerSpec(kind, c, c_out, k, stride, k // 2, bool(rng.random() < 0.7))
        return add(spec, (src,), (c_out, (L + 2 * (k // 2) - k) // stride + 1))

    add_conv(INPUT, "Conv1d")
    recent.remove(INPUT)  # every path then runs through the stem conv
    for _ in range(n_ops):
        src = pick()
        c, L = shapes[src]
        r = rng.random()
        if r < 0.35:
            add_conv(src)
        elif r < 0.45:
            add(LayerSpec("BatchNorm", c, c), (src,), (c, L))
        elif r < 0.55:
            add(LayerSpec("ReLU", c, c), (src,), (c, L))
        elif r < 0.62 and L >= 4:
            add(LayerSpec("MaxPool", c, c, 2, 2, 0), (src,), (c, L // 2))
        elif r < 0.68 and L >= 4:
            add(LayerSpec("AvgPool", c, c, 2, 2, 0), (src,), (c, L // 2))
        elif r < 0.74 and L <= 48:
            add(LayerSpec("Upsample", c, c, factor=2), (src,), (c, 2 * L))
        elif r < 0.87:
            mates = [t for t in recent if t != src and shapes[t] == (c, L)]
            if mates:
                add(LayerSpec("Add", c, c), (src, mates[int(rng.integers(len(mates)))]), (c, L))
            else:
                add_conv(src)
        else:
            mates = [t for t in recent if t != src and shapes[t][1] == L]
            if mates:
                other = mates[int(rng.integers(len(mates)))]
                c2 = shapes[other][0]
                add(LayerSpec("Concat", c + c2, c + c2), (src, other), (c + c2, L))
            else:
                add(LayerSpec("Identity", c, c), (src,), (c, L))
    last = recent[-1]
    c, L = shapes[last]
    head = head or ("scalar" if rng.random() < 0.5 else "series")
    if head == "scalar":
        gap = add(LayerSpec("GlobalAvgPool", c, c), (last,), (c,))
        nodes.append(Node(f"r{len(nodes)}", LayerSpec("Linear", c, 1), (gap,)))
    else:
        nodes.append(Node(f"r{len(nodes)}", LayerSpec("Conv1d", c, 1, 1, 1, 0, True), (last,)))
    out = nodes[-1].id
    return Graph(tuple(_prune(nodes, out)), (c0, length), out, "random")
