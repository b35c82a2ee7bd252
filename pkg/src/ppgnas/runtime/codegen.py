"""Portable C99 emitter: one translation unit plus a weights header, bit-exact with :mod:`interp`.

Layout: every activation is an int8 ``[C, L]`` (or ``[F]``) block in a single
static arena at the offsets of :func:`plan_arena`.  The entry point

    int ppgnet_run(const int8_t *input, int8_t *output);

copies one input sample into the arena, runs all layers in order and copies
the output tensor out; it returns 0.  Accumulators are int32, requantization
products int64.
"""
from __future__ import annotations

import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from ..graph import INPUT
from .intgraph import IntGraph, IntGraphError
from .memory import plan_arena

KERNELS = r"""
static inline int64_t ppg_rshift_round(int64_t v, int n)
{
    /* round(v / 2^n), ties to even; shifts act on the magnitude only */
    uint64_t a, q, r, half;
    if (n == 0) return v;
    a = v < 0 ? (uint64_t)(-v) : (uint64_t)v;
    q = a >> n;
    r = a & ((((uint64_t)1) << n) - 1u);
    half = ((uint64_t)1) << (n - 1);
    if (r > half || (r == half && (q & 1u))) q += 1u;
    return v < 0 ? -(int64_t)q : (int64_t)q;
}

static inline int8_t ppg_clamp(int64_t v, int lo, int hi)
{
    if (v < lo) v = lo;
    if (v > hi) v = hi;
    return (int8_t)v;
}

static inline int8_t ppg_requant(int32_t acc, int32_t m, int n, int zo, int lo, int hi)
{
    return ppg_clamp(ppg_rshift_round((int64_t)acc * (int64_t)m, n) + zo, lo, hi);
}

static inline void ppg_conv(const int8_t *x, int8_t *y, int c_in, int l_in, int c_out, int l_out, int k,
                            int stride, int pad, int groups, const int8_t *w, const int32_t *b, int zx, int zw,
                            int32_t m, int n, int zo, int lo, int hi)
{
    int cpg_in = c_in / groups, cpg_out = c_out / groups;
    int o, t, c, j;
    for (o = 0; o < c_out; ++o) {
        int g = o / cpg_out;
        const int8_t *wo = w + (long)o * cpg_in * k;
        for (t = 0; t < l_out; ++t) {
            int32_t acc = b[o];
            int base = t * stride - pad;
            for (c = 0; c < cpg_in; ++c) {
                const int8_t *xc = x + (long)(g * cpg_in + c) * l_in;
                for (j = 0; j < k; ++j) {
                    int p = base + j;
                    if (p < 0 || p >= l_in) continue; /* padding holds the real zero */
                    acc += ((int32_t)xc[p] - zx) * ((int32_t)wo[c * k + j] - zw);
                }
            }
            y[(long)o * l_out + t] = ppg_requant(acc, m, n, zo, lo, hi);
        }
    }
}

static inline void ppg_linear(const int8_t *x, int8_t *y, int f_in, int f_out, const int8_t *w, const int32_t *b,
                              int zx, int zw, int32_t m, int n, int zo, int lo, int hi)
{
    int o, i;
    for (o = 0; o < f_out; ++o) {
        int32_t acc = b[o];
        for (i = 0; i < f_in; ++i)
            acc += ((int32_t)x[i] - zx) * ((int32_t)w[(long)o * f_in + i] - zw);
        y[o] = ppg_requant(acc, m, n, zo, lo, hi);
    }
}

static inline void ppg_add(const int8_t *const *xs, int count, long size, const int *zi, const int32_t *m,
                           const int *align, int top, int8_t *y, int zo, int lo, int hi)
{
    long e;
    int i;
    for (e = 0; e < size; ++e) {
        int64_t acc = 0;
        for (i = 0; i < count; ++i)
            acc += (int64_t)((int32_t)xs[i][e] - zi[i]) * (int64_t)m[i] * (((int64_t)1) << align[i]);
        y[e] = ppg_clamp(ppg_rshift_round(acc, top) + zo, lo, hi);
    }
}

static inline void ppg_rescale(const int8_t *x, int8_t *y, long size, int zi, int32_t m, int n, int zo, int lo,
                               int hi)
{
    long e;
    for (e = 0; e < size; ++e)
        y[e] = ppg_requant((int32_t)x[e] - zi, m, n, zo, lo, hi);
}

static inline void ppg_maxpool(const int8_t *x, int8_t *y, int c, int l_in, int l_out, int k, int stride)
{
    int ch, t, j;
    for (ch = 0; ch < c; ++ch)
        for (t = 0; t < l_out; ++t) {
            int8_t best = x[(long)ch * l_in + t * stride];
            for (j = 1; j < k; ++j) {
                int8_t v = x[(long)ch * l_in + t * stride + j];
                if (v > best) best = v;
            }
            y[(long)ch * l_out + t] = best;
        }
}

static inline void ppg_avgpool(const int8_t *x, int8_t *y, int c, int l_in, int l_out, int k, int stride, int zi,
                               int32_t m, int n, int zo, int lo, int hi)
{
    int ch, t, j;
    for (ch = 0; ch < c; ++ch)
        for (t = 0; t < l_out; ++t) {
            int32_t s = 0;
            for (j = 0; j < k; ++j) s += (int32_t)x[(long)ch * l_in + t * stride + j] - zi;
            y[(long)ch * l_out + t] = ppg_requant(s, m, n, zo, lo, hi);
        }
}

static inline void ppg_upsample(const int8_t *x, int8_t *y, int c, int l_in, int factor)
{
    int ch, t, j;
    for (ch = 0; ch < c; ++ch)
        for (t = 0; t < l_in; ++t)
            for (j = 0; j < factor; ++j) y[((long)ch * l_in + t) * factor + j] = x[(long)ch * l_in + t];
}

static inline void ppg_relu(const int8_t *x, int8_t *y, long size, int zi)
{
    long e;
    for (e = 0; e < size; ++e) y[e] = x[e] > zi ? x[e] : (int8_t)zi;
}
"""


def _c_array(ctype: str, name: str, values: np.ndarray, per_line: int = 16) -> str:
    # INT32_MIN has no literal form in C: write it as an expression
    flat = [str(int(v)) if int(v) != -2 ** 31 else "(-2147483647 - 1)" for v in np.asarray(values).reshape(-1)]
    lines = [", ".join(flat[i:i + per_line]) for i in range(0, len(flat), per_line)]
    body = ",\n    ".join(lines) if lines else "0"
    return f"static const {ctype} {name}[{max(len(flat), 1)}] = {{\n    {body}\n}};\n"


def _int32(v: int) -> str:
    return f"(int32_t){v}"


def emit_c(ig: IntGraph, prefix: str = "ppgnet") -> dict[str, str]:
    """Return ``{filename: source}`` for ``<prefix>.c``, ``<prefix>.h`` and ``<prefix>_weights.h``.

    Output is a pure function of the graph, so emission is byte-deterministic.
    """
    plan = plan_arena(ig)
    shapes = ig.shapes
    size = {t: int(np.prod(s)) for t, s in shapes.items()}
    up = prefix.upper()

    def buf(t: str) -> str:
        return f"(arena + {plan.offsets[t]})"

    header = (f"/* Integer-only inference entry point (generated). */\n#ifndef {up}_H\n#define {up}_H\n\n"
              "#include <stdint.h>\n\n"
              f"#define {up}_INPUT_SIZE {size[INPUT]}\n#define {up}_OUTPUT_SIZE {size[ig.output]}\n"
              f"#define {up}_ARENA_BYTES {plan.arena_bytes}\n\n"
              f"/* input: int8 [{', '.join(map(str, shapes[INPUT]))}] row-major, "
              f"scale {ig.input_q.scale!r}, zero point {ig.input_q.zero_point}\n"
              f"   output: int8 [{', '.join(map(str, shapes[ig.output]))}], "
              f"scale {ig.output_q.scale!r}, zero point {ig.output_q.zero_point} */\n"
              f"int {prefix}_run(const int8_t *input, int8_t *output);\n\n#endif\n")

    weights = [f"/* Weights and int32 biases (generated). */\n#ifndef {up}_WEIGHTS_H\n#define {up}_WEIGHTS_H\n\n"
               "#include <stdint.h>\n\n"]
    body = []
    for i, L in enumerate(ig.layers):
        cin = shapes[L.inputs[0]]
        body.append(f"    /* {L.id}: {L.kind} */")
        lo, hi, zo = L.qmin, L.qmax, L.zero_out
        if L.kind in ("conv", "linear"):
            weights.append(f"/* {L.id} */\n" + _c_array("int8_t", f"w{i}", L.weight) + _c_array("int32_t", f"b{i}",
                                                                                                L.bias))
            m, n = L.mult[0]
            if L.kind == "conv":
                c_out, l_out = L.out_shape
                body.append(f"    ppg_conv({buf(L.inputs[0])}, {buf(L.id)}, {cin[0]}, {cin[1]}, {c_out}, {l_out}, "
                            f"{L.k}, {L.stride}, {L.padding}, {L.groups}, w{i}, b{i}, {L.zero_in[0]}, {L.zero_w}, "
                            f"{_int32(m)}, {n}, {zo}, {lo}, {hi});")
            else:
                body.append(f"    ppg_linear({buf(L.inputs[0])}, {buf(L.id)}, {cin[0]}, {L.out_shape[0]}, w{i}, b{i}, "
                            f"{L.zero_in[0]}, {L.zero_w}, {_int32(m)}, {L.mult[0][1]}, {zo}, {lo}, {hi});")
        elif L.kind == "add":
            top = max(n for _, n in L.mult)
            cnt = len(L.inputs)
            body.append("    {")
            body.append(f"        const int8_t *xs[{cnt}];")
            body.append(f"        static const int zi[{cnt}] = {{{', '.join(str(z) for z in L.zero_in)}}};")
            body.append(f"        static const int32_t mm[{cnt}] = {{{', '.join(_int32(m) for m, _ in L.mult)}}};")
            body.append(f"        static const int al[{cnt}] = {{{', '.join(str(top - n) for _, n in L.mult)}}};")
            for j, s in enumerate(L.inputs):
                body.append(f"        xs[{j}] = {buf(s)};")
            body.append(f"        ppg_add(xs, {cnt}, {size[L.id]}L, zi, mm, al, {top}, {buf(L.id)}, {zo}, {lo}, {hi});")
            body.append("    }")
        elif L.kind == "concat":
            off = 0
            for s, z, (m, n) in zip(L.inputs, L.zero_in, L.mult):
                body.append(f"    ppg_rescale({buf(s)}, {buf(L.id)} + {off}, {size[s]}L, {z}, {_int32(m)}, {n}, {zo}, "
                            f"{lo}, {hi});")
                off += size[s]
        elif L.kind == "maxpool":
            body.append(f"    ppg_maxpool({buf(L.inputs[0])}, {buf(L.id)}, {cin[0]}, {cin[1]}, {L.out_shape[1]}, "
                        f"{L.k}, {L.stride});")
        elif L.kind in ("avgpool", "gap"):
            m, n = L.mult[0]
            k, stride, l_out = (L.k, L.stride, L.out_shape[1]) if L.kind == "avgpool" else (cin[1], 1, 1)
            body.append(f"    ppg_avgpool({buf(L.inputs[0])}, {buf(L.id)}, {cin[0]}, {cin[1]}, {l_out}, {k}, "
                        f"{stride}, {L.zero_in[0]}, {_int32(m)}, {n}, {zo}, {lo}, {hi});")
        elif L.kind == "upsample":
            body.append(f"    ppg_upsample({buf(L.inputs[0])}, {buf(L.id)}, {cin[0]}, {cin[1]}, {L.factor});")
        elif L.kind == "identity":
            body.append(f"    memcpy({buf(L.id)}, {buf(L.inputs[0])}, {size[L.id]});")
        elif L.kind == "relu":
            body.append(f"    ppg_relu({buf(L.inputs[0])}, {buf(L.id)}, {size[L.id]}L, {L.zero_in[0]});")
        else:
            raise IntGraphError(f"{L.id}: no C kernel for {L.kind!r}")
    weights.append("\n#endif\n")

    source = (f"/* Integer-only inference (generated): {len(ig.layers)} layers, "
              f"{plan.arena_bytes}-byte activation arena. */\n"
              f'#include <stdint.h>\n#include <string.h>\n\n#include "{prefix}.h"\n#include "{prefix}_weights.h"\n'
              f"{KERNELS}\nstatic int8_t arena[{up}_ARENA_BYTES];\n\n"
              f"int {prefix}_run(const int8_t *input, int8_t *output)\n{{\n"
              f"    memcpy({buf(INPUT)}, input, {up}_INPUT_SIZE);\n" + "\n".join(body) + "\n"
              f"    memcpy(output, {buf(ig.output)}, {up}_OUTPUT_SIZE);\n    return 0;\n}}\n")
    return {f"{prefix}.c": source, f"{prefix}.h": header, f"{prefix}_weights.h": "".join(weights)}


def write_c(ig: IntGraph, out_dir, prefix: str = "ppgnet") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in emit_c(ig, prefix).items():
        p = out_dir / name
        p.write_text(text)
        paths.append(p)
    return paths


HARNESS = r"""
#include <stdio.h>
#include "ppgnet.h"

int main(void)
{
    static int8_t in[PPGNET_INPUT_SIZE], out[PPGNET_OUTPUT_SIZE];
    while (fread(in, 1, PPGNET_INPUT_SIZE, stdin) == PPGNET_INPUT_SIZE) {
        ppgnet_run(in, out);
        fwrite(out, 1, PPGNET_OUTPUT_SIZE, stdout);
    }
    return 0;
}
"""


def find_compiler() -> str | None:
    for cc in ("cc", "gcc", "clang"):
        if shutil.which(cc):
            return cc
    return None


def compile_and_run(ig: IntGraph, x: np.ndarray, workdir=None, cc: str | None = None) -> np.ndarray:
    """Build the emitted sources with a small stdin/stdout driver and run a batch through it."""
    cc = cc or find_compiler()
    if cc is None:
        raise RuntimeError("no C compiler found on PATH")
    x = np.ascontiguousarray(x, dtype=np.int8)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        tmp = Path(tmp)
        write_c(ig, tmp)
        (tmp / "main.c").write_text(HARNESS)
        exe = tmp / "ppgnet_test"
        subprocess.run([cc, "-std=c99", "-O2", "-Wall", "-Wextra", "-Werror", "-o", str(exe), str(tmp / "main.c"),
                        str(tmp / "ppgnet.c")], check=True, capture_output=True, text=True)
        res = subprocess.run([str(exe)], input=x.tobytes(), capture_output=True, check=True)
    out_shape = ig.shapes[ig.output]
    return np.frombuffer(res.stdout, dtype=np.int8).reshape((x.shape[0],) + tuple(out_shape))
