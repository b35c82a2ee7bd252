"""ppgnas: size-aware architecture search, int8 quantization and C deployment for PPG blood-pressure CNNs.

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure,
3 memory-budget violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 1, 2, 3

log = logging.getLogger("ppgnas")


def _parse_set(items) -> dict:
    import yaml
    out = {}
    for item in items or []:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def _config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration (flags override the YAML file)")
    g.add_argument("-c", "--config", help="YAML file with pipeline settings")
    g.add_argument("--dataset", help="synthetic:<seed>, an .ndjson record file or a window cache written by save_windows")
    g.add_argument("--family", choices=("resnet", "unet"), help="seed network family")
    g.add_argument("--profile", help="seed size profile (desk, uci)")
    g.add_argument("--target", choices=("sbp", "dbp", "sig2sig"), help="what the network predicts")
    g.add_argument("--epochs", type=int, help="seed training epochs")
    g.add_argument("--seed", type=int, help="root random seed")
    g.add_argument("--out", help="output directory")
    g.add_argument("--lambdas", help="'default' (18 log-spaced values in [1e-11, 1e-7]) or comma-separated list")
    g.add_argument("--budget-bytes", type=int, dest="budget_bytes", help="deployment memory budget")
    g.add_argument("--workers", type=int, help="parallel processes for the lambda sweep")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")


def _load_cfg(args):
    from .pipeline import PipelineConfig
    overrides = {k: getattr(args, k) for k in ("dataset", "family", "profile", "target", "epochs", "seed", "out",
                                               "lambdas", "budget_bytes", "workers")}
    overrides.update(_parse_set(args.set))
    return PipelineConfig.load(args.config, overrides)


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def cmd_train_seed(args) -> int:
    from .pipeline import train_seed
    cfg = _load_cfg(args)
    rep = train_seed(cfg)
    _print(rep)
    print(f"seed checkpoint: {cfg.out_dir / 'seed.ppgm'}")
    return EXIT_OK


def cmd_nas_sweep(args) -> int:
    from .pipeline import nas_sweep
    cfg = _load_cfg(args)
    points = nas_sweep(cfg, args.checkpoint)
    front = sum(p.pareto for p in points)
    print(f"{len(points)} rows, {front} on the Pareto front -> {cfg.out_dir / 'pareto.csv'}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .pipeline import BudgetError, quantize
    cfg = _load_cfg(args)
    try:
        doc = quantize(cfg, args.checkpoint)
    except BudgetError as e:
        print(f"fits: no\n{e}", file=sys.stderr)
        return EXIT_BUDGET
    _print(doc)
    m = doc["memory"]
    print(f"fits: yes ({m['total_bytes']} of {m['budget_bytes']} B)")
    return EXIT_OK


def cmd_emit_c(args) -> int:
    from .pipeline import emit_c
    res = emit_c(args.intgraph, args.out, args.check, args.seed)
    for f in res["files"]:
        print(f)
    if args.check:
        ok = res["bit_exact"]
        print(f"bit-exact: {'PASS' if ok else 'FAIL'} ({args.check} inputs, {res['mismatching_inputs']} differ)")
        return EXIT_OK if ok else EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import evaluate
    _print(evaluate(_load_cfg(args), args.checkpoint))
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import report
    res = report(args.dir)
    print(res["text"], end="")
    print(f"plot: {res['svg']}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .checks import check_codegen, check_gradients, check_int_equivalence
    n = (5, 10, 5) if args.quick else (20, 100, 100)
    results = [check_gradients(n[0], args.seed), check_int_equivalence(n[1], args.seed)]
    if not args.skip_codegen:
        results.append(check_codegen(n[2], args.seed))
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppgnas", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 1 usage/config, 2 numerical failure, 3 over budget")
    p.add_argument("--version", action="version", version=f"ppgnas {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("train-seed", help="train the seed network and report its test MAE")
    _config_args(s)
    s.set_defaults(fn=cmd_train_seed)

    s = sub.add_parser("nas-sweep", help="search one child per lambda; writes pareto.csv and child checkpoints")
    _config_args(s)
    s.add_argument("--checkpoint", help="seed checkpoint (default: <out>/seed.ppgm, trained if missing)")
    s.set_defaults(fn=cmd_nas_sweep)

    s = sub.add_parser("quantize", help="QAT, integer export, C emission and the memory-budget verdict")
    _config_args(s)
    s.add_argument("--checkpoint", help="float checkpoint (default: <out>/seed.ppgm)")
    s.set_defaults(fn=cmd_quantize)

    s = sub.add_parser("emit-c", help="emit C sources for an integer graph; --check runs the differential test")
    s.add_argument("intgraph", help="integer graph file (.pgi) written by `quantize`")
    s.add_argument("--out", default="ppgnet_c", help="directory for ppgnet.c / ppgnet.h / ppgnet_weights.h")
    s.add_argument("--check", type=int, default=0, metavar="N",
                   help="compile and compare against the interpreter on N random inputs")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_emit_c)

    s = sub.add_parser("eval", help="test-split MAE of a float (.ppgm) or integer (.pgi) model")
    _config_args(s)
    s.add_argument("checkpoint")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", help="summary table and MAE-vs-size SVG from a sweep directory")
    s.add_argument("dir", help="directory holding pareto.csv (and optionally seed_report.json)")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("selftest", help="gradient, integer-equivalence and codegen self-checks")
    s.add_argument("--quick", action="store_true", help="fewer random instances")
    s.add_argument("--skip-codegen", action="store_true", help="do not compile C (no compiler available)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    from .graph import FormatError, GraphError
    from .nas import NasError
    from .pipeline import ConfigError
    from .quant import QuantError
    from .runtime import IntGraphError
    from .tensor import NumericalError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (NumericalError, QuantError, IntGraphError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GraphError, FormatError, NasError, argparse.ArgumentTypeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
