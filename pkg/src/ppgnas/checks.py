"""Randomized self-checks shared by ``ppgnas selftest`` and the test-suite.

Three harnesses:

* ``gradient_suite`` - central finite differences for every differentiable op
  (straight-through estimators are checked against the surrogate they stand
  in for, away from clip boundaries);
* ``int_equivalence`` - integer interpreter vs the float64 fake-quant
  simulation, per layer and end to end, on random graphs;
* ``codegen_differential`` - emitted C compiled and run vs the interpreter.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .graph import INPUT, Graph, Model, Node, conv, random_graph
from .quant import QuantParams, export_int_graph, fake_quant, lower, pact
from .tensor import Tensor, float64_mode, gradcheck, no_grad, ops

GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


# -- gradient suite ---------------------------------------------------------------------------------------------

def _geom(rng):
    n, c, length = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(6, 12))
    return n, c, length


def _case_conv(rng):
    n, c, length = _geom(rng)
    k, stride, pad = int(rng.choice([1, 3, 5])), int(rng.integers(1, 3)), int(rng.integers(0, 3))
    c_out = int(rng.integers(1, 4))
    arrays = [rng.standard_normal((n, c, length)), rng.standard_normal((c_out, c, k)), rng.standard_normal(c_out)]
    return (lambda x, w, b: ops.conv1d(x, w, b, stride, pad)), arrays, None


def _case_dwconv(rng):
    n, c, length = _geom(rng)
    k, stride, pad = int(rng.choice([1, 3, 5])), int(rng.integers(1, 3)), int(rng.integers(0, 3))
    arrays = [rng.standard_normal((n, c, length)), rng.standard_normal((c, 1, k)), rng.standard_normal(c)]
    return (lambda x, w, b: ops.depthwise_conv1d(x, w, b, stride, pad)), arrays, None


def _case_pool(rng):
    n, c, length = _geom(rng)
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, k + 1))
    kind = ("max", "avg", "gap")[int(rng.integers(3))]
    fn = {"max": lambda x: ops.max_pool1d(x, k, stride), "avg": lambda x: ops.avg_pool1d(x, k, stride),
          "gap": ops.global_avg_pool}[kind]
    return fn, [rng.standard_normal((n, c, length))], None


def _case_upsample(rng):
    n, c, length = _geom(rng)
    factor = int(rng.integers(1, 4))
    return (lambda x: ops.upsample(x, factor)), [rng.standard_normal((n, c, length))], None


def _case_concat(rng):
    n, _, length = _geom(rng)
    arrays = [rng.standard_normal((n, int(rng.integers(1, 4)), length)) for _ in range(int(rng.integers(2, 4)))]
    return (lambda *xs: ops.concat(list(xs), axis=1)), arrays, None


def _case_linear(rng):
    n, f, o = int(rng.integers(1, 4)), int(rng.integers(1, 8)), int(rng.integers(1, 5))
    arrays = [rng.standard_normal((n, f)), rng.standard_normal((o, f)), rng.standard_normal(o)]
    return ops.linear, arrays, None


def _case_mixture(rng):
    from .nas import expand_to_supernet, mixture_forward
    c = int(rng.integers(1, 4))
    c_out = c if rng.random() < 0.5 else int(rng.integers(1, 5))  # equal shapes also offer the identity
    g = Graph((Node("c", conv(c, c_out, 3), (INPUT,)),), (c, 10), "c")
    with float64_mode():
        block = expand_to_supernet(g, rng_seed=int(rng.integers(1 << 30))).blocks["c"]
    n_alt = len(block.alternatives)

    def fn(x, theta):
        block.theta = theta
        return mixture_forward(block, x)

    return fn, [rng.standard_normal((2, c, 10)), rng.standard_normal(n_alt)], None


def _away_from(x, edges, gap):
    """Nudge values lying within ``gap`` of an edge so the central difference never straddles it."""
    for e in edges:
        near = np.abs(x - e) < gap
        x[near] = e + np.where(x[near] >= e, gap, -gap) * 2
    return x


def _case_pact(rng):
    signed = bool(rng.integers(2))
    alpha = float(rng.uniform(0.5, 3.0))
    x = _away_from(rng.uniform(-1.5 * alpha, 1.5 * alpha, (2, 3, 8)), [0.0, alpha, -alpha], 1e-3)

    def surrogate(t, a):  # clip(t, lo, a): the function PaCT differentiates through
        top = ops.sub(ops.relu(t), ops.relu(ops.sub(t, a)))
        if not signed:
            return top
        neg = ops.mul(ops.relu(ops.mul(t, -1.0)), -1.0)
        return ops.add(top, ops.add(neg, ops.relu(ops.sub(ops.mul(t, -1.0), a))))

    return (lambda t, a: pact(t, a, signed)), [x, np.array(alpha)], surrogate


def _case_fake_quant(rng):
    q = QuantParams(float(rng.uniform(0.01, 0.1)), int(rng.integers(-20, 21)))
    lo, hi = (-128 - q.zero_point) * q.scale, (127 - q.zero_point) * q.scale
    x = _away_from(rng.uniform(lo - 1.0, hi + 1.0, (3, 16)), [lo, hi], 1e-3)
    inside = ((x >= lo) & (x <= hi)).astype(np.float64)
    return (lambda t: fake_quant(t, q)), [x], (lambda t: ops.mul(t, inside))


GRADIENT_CASES = {
    "conv": _case_conv, "dw_conv": _case_dwconv, "pool": _case_pool, "upsample": _case_upsample,
    "concat": _case_concat, "linear": _case_linear, "mixture_forward": _case_mixture, "pact": _case_pact,
    "fake_quant_ste": _case_fake_quant,
}


def gradient_suite(instances: int = 20, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Worst relative gradient error per op over ``instances`` random cases each."""
    rng = np.random.default_rng(seed)
    worst = {}
    for name, make in GRADIENT_CASES.items():
        errs = []
        for i in range(instances):
            fn, arrays, reference = make(rng)
            errs.append(gradcheck(fn, arrays, h=h, seed=i, reference=reference))
        worst[name] = max(errs)
    return worst


def check_gradients(instances: int = 20, seed: int = 0) -> CheckResult:
    t = time.perf_counter()
    worst = gradient_suite(instances, seed)
    ok = all(v < GRAD_TOL for v in worst.values())
    detail = f"{len(worst)} ops x {instances} instances, max rel err {max(worst.values()):.2e} (tol {GRAD_TOL:g})"
    return CheckResult("gradients", ok, detail, time.perf_counter() - t, worst)


# -- integer equivalence ---------------------------------------------------------------------------------------

def random_int_case(rng: np.random.Generator, batch: int = 4):
    """A random graph with random BN statistics, lowered, calibrated and exported; plus a float input batch."""
    g = random_graph(rng)
    m = Model.init(g, int(rng.integers(1 << 30)))
    for buf in m.buffers.values():
        if buf:
            buf["running_mean"][:] = rng.normal(0, 0.3, buf["running_mean"].shape)
            buf["running_var"][:] = rng.uniform(0.5, 2.0, buf["running_var"].shape)
    qm = lower(m)
    x = rng.standard_normal((batch,) + g.input_shape)
    qm.calibrate(x)
    return qm, export_int_graph(qm), x


def layer_errors(qm, ig, x) -> tuple[dict[str, int], float]:
    """Per-layer LSB error (each integer layer fed the simulation's own inputs) and end-to-end error in output scales."""
    from .runtime import run, run_layer
    trace: dict = {}
    with float64_mode(), no_grad():
        y = qm(Tensor(x), trace=trace).data
    grids = qm.act_params()
    levels = {k: (np.rint(v / grids[k].scale) + grids[k].zero_point).astype(np.int64) for k, v in trace.items()}
    per_layer = {}
    for L in ig.layers:
        out = run_layer(L, [levels[s].astype(np.int8) for s in L.inputs])
        per_layer[L.id] = int(np.abs(out.astype(np.int64) - levels[L.id]).max())
    _, deq = run(ig, ig.quantize_input(x))
    return per_layer, float(np.abs(deq - y).max() / ig.output_q.scale)


def int_equivalence(n_graphs: int = 100, seed: int = 0) -> tuple[int, float]:
    """(worst per-layer LSB error, worst end-to-end error in output scales) over random graphs."""
    rng = np.random.default_rng(seed)
    worst_layer, worst_e2e = 0, 0.0
    for _ in range(n_graphs):
        qm, ig, x = random_int_case(rng)
        per_layer, e2e = layer_errors(qm, ig, x)
        worst_layer = max(worst_layer, max(per_layer.values()))
        worst_e2e = max(worst_e2e, e2e)
    return worst_layer, worst_e2e


def check_int_equivalence(n_graphs: int = 100, seed: int = 0) -> CheckResult:
    t = time.perf_counter()
    lsb, e2e = int_equivalence(n_graphs, seed)
    ok = lsb <= 1 and e2e <= 2.0
    detail = f"{n_graphs} graphs, worst layer {lsb} LSB (tol 1), end-to-end {e2e:.2f} output scales (tol 2)"
    return CheckResult("int-equivalence", ok, detail, time.perf_counter() - t, {"lsb": lsb, "e2e": e2e})


# -- codegen differential ----------------------------------------------------------------------------------------

def codegen_differential(n_graphs: int = 100, seed: int = 0, batch: int = 4) -> tuple[int, int]:
    """(mismatching graphs, non-deterministic emissions) between compiled C and the interpreter."""
    from .runtime import IntGraph, compile_and_run, emit_c, run
    rng = np.random.default_rng(seed)
    mismatches = nondet = 0
    for _ in range(n_graphs):
        _, ig, x = random_int_case(rng, batch)
        xq = ig.quantize_input(x)
        xq[0] = rng.integers(-128, 128, xq[0].shape)  # also drive out-of-calibration codes
        ref, _ = run(ig, xq)
        mismatches += not np.array_equal(ref, compile_and_run(ig, xq))
        nondet += emit_c(ig) != emit_c(IntGraph.from_bytes(ig.to_bytes()))
    return mismatches, nondet


def check_codegen(n_graphs: int = 100, seed: int = 0) -> CheckResult:
    from .runtime import find_compiler
    t = time.perf_counter()
    if find_compiler() is None:
        return CheckResult("codegen", False, "no C compiler on PATH", 0.0)
    bad, nondet = codegen_differential(n_graphs, seed)
    detail = f"{n_graphs} graphs, {bad} output mismatches, {nondet} non-deterministic emissions"
    return CheckResult("codegen", bad == 0 and nondet == 0, detail, time.perf_counter() - t,
                       {"mismatches": bad, "nondeterministic": nondet})
