"""Static memory model: weight bytes, activation arena plan and the deployment-budget check."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import INPUT
from .intgraph import IntGraph

DEFAULT_BUDGET = 524288  # 512 kB of on-chip memory
RUNTIME_OVERHEAD = 16 * 1024  # code + stack allowance


@dataclass(frozen=True)
class ArenaPlan:
    offsets: dict[str, int]  # tensor id -> byte offset in the activation arena
    sizes: dict[str, int]
    arena_bytes: int
    live_peak_bytes: int  # lower bound: largest set of simultaneously live tensors


@dataclass(frozen=True)
class MemoryReport:
    weight_bytes: int
    peak_activation_bytes: int
    overhead_bytes: int
    budget_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.peak_activation_bytes + self.overhead_bytes

    @property
    def fits(self) -> bool:
        return self.total_bytes <= self.budget_bytes

    def to_dict(self) -> dict:
        return {"weight_bytes": self.weight_bytes, "peak_activation_bytes": self.peak_activation_bytes,
                "overhead_bytes": self.overhead_bytes, "total_bytes": self.total_bytes,
                "budget_bytes": self.budget_bytes, "fits": self.fits}


def weight_bytes(ig: IntGraph) -> int:
    return sum(L.weight.size + 4 * L.bias.size for L in ig.layers if L.weight is not None)


def plan_arena(ig: IntGraph) -> ArenaPlan:
    """Greedy first-fit placement of int8 activations by liveness.

    A tensor lives from the step that produces it (the input: step 0) through
    its last consumer; the output lives to the end.  Inputs and output of a
    step are live together, so a layer never overwrites what it reads.
    Tensors are placed in production order at the lowest offset that does
    not overlap any live-range-intersecting tensor already placed.
    """
    shapes = ig.shapes
    sizes = {t: int(np.prod(s)) for t, s in shapes.items()}
    start = {INPUT: 0}
    end = {INPUT: 0}
    for i, L in enumerate(ig.layers, start=1):
        start[L.id] = end[L.id] = i
        for s in L.inputs:
            end[s] = max(end[s], i)
    end[ig.output] = len(ig.layers) + 1
    order = [INPUT] + [L.id for L in ig.layers]
    offsets: dict[str, int] = {}
    for t in order:
        busy = sorted((offsets[u], offsets[u] + sizes[u]) for u in offsets
                      if start[u] <= end[t] and start[t] <= end[u])
        off = 0
        for lo, hi in busy:
            if off + sizes[t] <= lo:
                break
            off = max(off, hi)
        offsets[t] = off
    arena = max(offsets[t] + sizes[t] for t in order)
    steps = range(len(ig.layers) + 2)
    live = max(sum(sizes[t] for t in order if start[t] <= s <= end[t]) for s in steps)
    return ArenaPlan(offsets, sizes, arena, live)


def memory_report(ig: IntGraph, budget_bytes: int = DEFAULT_BUDGET,
                  overhead_bytes: int = RUNTIME_OVERHEAD) -> MemoryReport:
    return MemoryReport(weight_bytes(ig), plan_arena(ig).arena_bytes, overhead_bytes, budget_bytes)


def int_mac_count(ig: IntGraph) -> int:
    """Multiply-accumulates of conv-type and linear layers: output elements x per-output fan-in."""
    total = 0
    for L in ig.layers:
        if L.kind in ("conv", "linear"):
            total += int(np.prod(L.out_shape)) * int(L.weight[0].size)
    return total
