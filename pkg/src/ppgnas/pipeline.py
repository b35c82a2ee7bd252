"""End-to-end flow behind the command line: seed training, lambda sweep, QAT + deployment, evaluation, reports.

Every command takes a :class:`PipelineConfig` and writes into ``cfg.out``.
All randomness derives from ``cfg.seed``; commands are deterministic given
(config, seed).
"""
from __future__ import annotations

import json
import logging
import math
import platform
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data.records import WINDOW_MAGIC
from .data import (WindowSet, load_windows, read_ndjson, split_per_subject, synth_generate, windows_from_records)
from .graph import Model, build_profile, int8_size_bytes, load_model, mac_count, param_count, save_model
from .graph.serialize import write_atomic
from .nas import DEFAULT_LAMBDAS, NasConfig, ParetoPoint, pareto_flags, read_csv, sweep
from .quant import export_int_graph, qat_finetune
from .runtime import IntGraph, int_mac_count, memory_report, run, write_c
from .training import BP_SCALE, TaskData, evaluate_forward, fit, prepare, target_offset, to_mmhg

log = logging.getLogger(__name__)

SEED_CKPT = "seed.ppgm"
SEED_REPORT = "seed_report.json"
PARETO_CSV = "pareto.csv"
DEPLOY_DIR = "deploy"


class ConfigError(ValueError):
    """Bad configuration or inputs (exit code 1)."""


class BudgetError(RuntimeError):
    """Deployed model exceeds the memory budget (exit code 3)."""


@dataclass
class PipelineConfig:
    dataset: str = "synthetic:0"  # synthetic:<seed> | records.ndjson | window cache
    synthetic_subjects: int = 48
    synthetic_seconds: float = 120.0
    window_seconds: float = 5.0
    family: str = "resnet"  # resnet | unet
    profile: str = "desk"  # desk | uci
    target: str = "sbp"  # sbp | dbp | sig2sig
    split: str = "holdout"  # holdout | kfold
    folds: int = 5
    fold: int = 0
    seed: int = 0
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 64
    lambdas: list | str = "default"
    nas_epochs: int = 50
    nas_lr_weights: float = 1e-3
    nas_lr_theta: float = 1e-2
    finetune_epochs: int = 10
    qat_epochs: int = 5
    qat_lr: float = 1e-4
    budget_bytes: int = 524288
    out: str = "runs/default"
    workers: int = 1

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "PipelineConfig":
        doc = {}
        if path is not None:
            try:
                doc = yaml.safe_load(Path(path).read_text()) or {}
            except FileNotFoundError:
                raise ConfigError(f"config file {path} not found") from None
            except yaml.YAMLError as e:
                raise ConfigError(f"config file {path} is not valid YAML: {e}") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"config file {path} must hold a mapping of settings")
        doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; valid keys: {sorted(known)}")
        cfg = cls()
        for k, v in doc.items():
            default = getattr(cfg, k)
            if isinstance(default, bool) or k == "lambdas":
                setattr(cfg, k, v)
            elif isinstance(default, (int, float, str)):
                try:
                    setattr(cfg, k, type(default)(v))
                except (TypeError, ValueError):
                    raise ConfigError(f"config key {k!r}: cannot read {v!r} as {type(default).__name__}") from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.family not in ("resnet", "unet"):
            raise ConfigError(f"family must be resnet or unet, got {self.family!r}")
        if self.target not in ("sbp", "dbp", "sig2sig"):
            raise ConfigError(f"target must be sbp, dbp or sig2sig, got {self.target!r}")
        if self.target == "sig2sig" and self.family != "unet":
            raise ConfigError("sig2sig reconstruction needs the unet family (resnet regresses a scalar)")
        if self.target != "sig2sig" and self.family == "unet":
            raise ConfigError("the unet family reconstructs the waveform; use target sig2sig")
        if self.split not in ("holdout", "kfold"):
            raise ConfigError(f"split must be holdout or kfold, got {self.split!r}")
        if self.split == "kfold" and not 0 <= self.fold < self.folds:
            raise ConfigError(f"fold {self.fold} outside 0..{self.folds - 1}")
        for k in ("epochs", "nas_epochs", "finetune_epochs", "qat_epochs"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")
        if self.batch_size < 1 or self.workers < 1 or self.budget_bytes < 1:
            raise ConfigError("batch_size, workers and budget_bytes must be positive")
        self.lambda_grid()

    def lambda_grid(self) -> list[float]:
        lam = self.lambdas
        if isinstance(lam, str):
            if lam.strip() == "default":
                return list(DEFAULT_LAMBDAS)
            lam = [v for v in lam.split(",") if v.strip()]
        try:
            grid = [float(v) for v in lam]
        except (TypeError, ValueError):
            raise ConfigError(f"lambdas must be 'default' or a list of numbers, got {self.lambdas!r}") from None
        if not grid:
            raise ConfigError("the lambda grid is empty; give at least one value or 'default'")
        if any(v < 0 or not math.isfinite(v) for v in grid):
            raise ConfigError("lambda values must be finite and non-negative")
        return grid

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


# -- data ----------------------------------------------------------------------------------------------------------

def load_dataset(cfg: PipelineConfig) -> WindowSet:
    src = cfg.dataset
    if src.startswith("synthetic:"):
        try:
            seed = int(src.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"dataset {src!r}: expected synthetic:<integer seed>") from None
        records = synth_generate(seed, cfg.synthetic_subjects, cfg.synthetic_seconds)
        return windows_from_records(records, cfg.window_seconds)
    path = Path(src)
    if not path.exists():
        raise ConfigError(f"dataset {src} not found (use synthetic:<seed>, an .ndjson record file or a "
                          "window cache)")
    with open(path, "rb") as fh:
        if fh.read(len(WINDOW_MAGIC)) == WINDOW_MAGIC:
            return load_windows(path)
    return windows_from_records(list(read_ndjson(path)), cfg.window_seconds)


@dataclass
class Task:
    graph_input_len: int
    meta: dict
    train: TaskData
    val: TaskData
    test: TaskData


def build_task(cfg: PipelineConfig, input_len: int | None = None) -> Task:
    """Windows -> subject-wise split -> normalized train/val/test tensors."""
    ws = load_dataset(cfg)
    if cfg.target == "sig2sig" and not ws.has_abp:
        raise ConfigError("sig2sig models cannot be trained on this dataset: it carries only scalar SBP/DBP "
                          "labels, no ABP waveforms")
    if input_len is None:
        input_len = build_profile(cfg.family, cfg.profile).input_shape[-1]
    splits = split_per_subject(ws.subjects, k=cfg.folds, mode=cfg.split, seed=cfg.seed)
    sp = splits[cfg.fold if cfg.split == "kfold" else 0]
    train_ws = ws.subset(sp.train)
    off = target_offset(train_ws, cfg.target)
    meta = {"target": cfg.target, "target_offset": off, "target_scale": BP_SCALE, "family": cfg.family,
            "profile": cfg.profile}
    data = [prepare(ws.subset(idx), cfg.target, input_len, off) for idx in (sp.train, sp.val, sp.test)]
    return Task(input_len, meta, *data)


# -- bookkeeping ---------------------------------------------------------------------------------------------------

def write_manifest(cfg: PipelineConfig, command: str, outputs: dict | None = None) -> Path:
    doc = {"command": command, "seed": cfg.seed, "config": cfg.to_dict(), "outputs": outputs or {},
           "versions": {"ppgnas": __version__, "python": platform.python_version(), "numpy": np.__version__},
           "argv": sys.argv}
    path = cfg.out_dir / f"manifest-{command}.json"
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _write_json(path: Path, doc: dict) -> None:
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def model_summary(model: Model) -> dict:
    g = model.graph
    return {"params": param_count(g), "size_bytes": int8_size_bytes(g), "macs": mac_count(g)}


# -- commands ------------------------------------------------------------------------------------------------------

def train_seed(cfg: PipelineConfig) -> dict:
    task = build_task(cfg)
    g = build_profile(cfg.family, cfg.profile)
    model = Model.init(g, cfg.seed, {**task.meta, "role": "seed"})
    history = fit(model, task.train, cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed, val=task.val)
    metrics = evaluate_forward(model.forward, model.meta, task.test)
    ckpt = cfg.out_dir / SEED_CKPT
    save_model(model, ckpt)
    report = {**metrics, **model_summary(model), "epochs": cfg.epochs,
              "final_train_loss": history[-1]["train_loss"] if history else None,
              "n_train": len(task.train), "n_val": len(task.val), "n_test": len(task.test)}
    _write_json(cfg.out_dir / SEED_REPORT, report)
    write_manifest(cfg, "train-seed", {"checkpoint": str(ckpt)})
    return report


def _seed_model(cfg: PipelineConfig, checkpoint=None) -> Model:
    path = Path(checkpoint) if checkpoint else cfg.out_dir / SEED_CKPT
    if path.exists():
        return load_model(path)
    if checkpoint:
        raise ConfigError(f"checkpoint {path} not found")
    log.info("no seed checkpoint at %s; training one first", path)
    train_seed(cfg)
    return load_model(path)


def nas_sweep(cfg: PipelineConfig, checkpoint=None) -> list[ParetoPoint]:
    grid = cfg.lambda_grid()
    seed = _seed_model(cfg, checkpoint)
    task = build_task(cfg, seed.graph.input_shape[-1])
    ncfg = NasConfig(lr_weights=cfg.nas_lr_weights, lr_theta=cfg.nas_lr_theta, epochs=cfg.nas_epochs,
                     batch_size=cfg.batch_size, seed=cfg.seed)
    csv_path = cfg.out_dir / PARETO_CSV
    points = sweep(seed, task.train, task.val, task.test, grid, ncfg, cfg.finetune_epochs, csv_path,
                   cfg.out_dir / "children", workers=cfg.workers)
    write_manifest(cfg, "nas-sweep", {"csv": str(csv_path), "rows": len(points)})
    return points


def _int_forward_mae(ig: IntGraph, meta: dict, data: TaskData) -> dict[str, float]:
    from .data import mae
    _, deq = run(ig, ig.quantize_input(data.x))
    preds = to_mmhg(deq, meta)
    return {f"mae_{k}": mae(v, getattr(data, k)) for k, v in preds.items()}


def quantize(cfg: PipelineConfig, checkpoint=None) -> dict:
    """QAT, integer export, C emission and the budget verdict.  Raises BudgetError after writing artifacts."""
    model = _seed_model(cfg, checkpoint)
    task = build_task(cfg, model.graph.input_shape[-1])
    meta = model.meta
    float_mae = evaluate_forward(model.forward, meta, task.test)
    qm = qat_finetune(model, task.train, cfg.qat_epochs, cfg.qat_lr, cfg.batch_size, cfg.seed)
    qat_mae = evaluate_forward(qm.forward, meta, task.test)
    ig = export_int_graph(qm)
    ig.meta.update({k: meta[k] for k in ("target", "target_offset", "target_scale") if k in meta})
    int_mae = _int_forward_mae(ig, meta, task.test)
    out = cfg.out_dir / DEPLOY_DIR
    ig.save(out / "model.pgi")
    write_c(ig, out / "c")
    rep = memory_report(ig, cfg.budget_bytes)
    doc = {"memory": rep.to_dict(), "macs": int_mac_count(ig), "float": float_mae, "qat": qat_mae, "int": int_mae}
    _write_json(out / "report.json", doc)
    write_manifest(cfg, "quantize", {"intgraph": str(out / "model.pgi"), "c_dir": str(out / "c")})
    if not rep.fits:
        raise BudgetError(f"o.o.m.: {rep.total_bytes} B (weights {rep.weight_bytes} + activations "
                          f"{rep.peak_activation_bytes} + overhead {rep.overhead_bytes}) exceeds the "
                          f"{rep.budget_bytes} B budget")
    return doc


def emit_c(intgraph_path, out_dir, check: int = 0, seed: int = 0) -> dict:
    """Emit C for a stored IntGraph; with ``check > 0`` compile it and compare ``check`` random inputs."""
    from .runtime import compile_and_run, find_compiler
    path = Path(intgraph_path)
    if not path.exists():
        raise ConfigError(f"integer graph {path} not found (run `ppgnas quantize` first)")
    ig = IntGraph.load(path)
    files = write_c(ig, out_dir)
    result = {"files": [str(p) for p in files]}
    if check:
        if find_compiler() is None:
            raise ConfigError("no C compiler (cc, gcc or clang) on PATH for the differential check")
        x = np.random.default_rng(seed).integers(-128, 128, (check,) + tuple(ig.input_shape)).astype(np.int8)
        ref, _ = run(ig, x)
        got = compile_and_run(ig, x)
        result["bit_exact"] = bool(np.array_equal(ref, got))
        result["mismatching_inputs"] = int((ref != got).reshape(check, -1).any(axis=1).sum())
    return result


def evaluate(cfg: PipelineConfig, checkpoint) -> dict:
    path = Path(checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found")
    if path.suffix == ".pgi":
        ig = IntGraph.load(path)
        task = build_task(cfg, ig.input_shape[-1])
        meta = {**task.meta, **ig.meta}
        return {"kind": "int8", **_int_forward_mae(ig, meta, task.test)}
    model = load_model(path)
    task = build_task(cfg, model.graph.input_shape[-1])
    return {"kind": "float", **evaluate_forward(model.forward, {**task.meta, **model.meta}, task.test),
            **model_summary(model)}


# -- report --------------------------------------------------------------------------------------------------------

def front_polyline(points: list[ParetoPoint]) -> list[tuple[int, float]]:
    """Non-dominated (size, error) pairs ordered by size; error strictly decreases along it."""
    flags = pareto_flags([p.params for p in points], [p.error() for p in points])
    front = sorted(((p.params, p.error()) for p, f in zip(points, flags) if f))
    out = []
    for size, err in front:  # equal-cost duplicates collapse to one vertex
        if not out or out[-1] != (size, err):
            out.append((size, err))
    return out


def report(run_dir) -> dict:
    """Summary text + MAE-vs-size SVG scatter from a sweep directory (a pure function of its files)."""
    run_dir = Path(run_dir)
    csv_path = run_dir / PARETO_CSV
    if not csv_path.exists():
        raise ConfigError(f"missing inputs in {run_dir}: expected {PARETO_CSV} (from `ppgnas nas-sweep`) and "
                          f"optionally {SEED_REPORT} (from `ppgnas train-seed`)")
    points = read_csv(csv_path)
    if not points:
        raise ConfigError(f"{csv_path} has no rows")
    seed_doc = json.loads((run_dir / SEED_REPORT).read_text()) if (run_dir / SEED_REPORT).exists() else None
    front = front_polyline(points)
    flags = pareto_flags([p.params for p in points], [p.error() for p in points])

    lines = [f"{len(points)} sweep points, {int(np.sum(flags))} Pareto-optimal ({len(front)} distinct front vertices)",
             "",
             f"{'lambda':>10} {'params':>8} {'size_B':>8} {'macs':>10} {'mae_sbp':>8} {'mae_dbp':>8} pareto"]
    for p, f in sorted(zip(points, flags), key=lambda t: t[0].lam):
        lines.append(f"{p.lam:>10.3e} {p.params:>8d} {p.size_bytes:>8d} {p.macs:>10d} {p.mae_sbp:>8.3f} "
                     f"{p.mae_dbp:>8.3f} {'*' if f else ''}")
    if seed_doc:
        errs = [seed_doc[k] for k in ("mae_sbp", "mae_dbp") if k in seed_doc]
        lines += ["", f"seed: params {seed_doc['params']}, MAE {float(np.mean(errs)):.3f}"]
    text = "\n".join(lines) + "\n"
    write_atomic(run_dir / "report.txt", text)

    svg = _scatter_svg(points, flags, front, seed_doc)
    write_atomic(run_dir / "report.svg", svg)
    return {"points": len(points), "front": front, "text": text, "svg": str(run_dir / "report.svg")}


def _scatter_svg(points, flags, front, seed_doc) -> str:
    import io

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "ppgnas", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        size = np.array([p.params for p in points], dtype=float)
        err = np.array([p.error() for p in points])
        flags = np.asarray(flags, dtype=bool)
        ax.scatter(size[~flags], err[~flags], c="0.6", s=18, label="sweep")
        ax.scatter(size[flags], err[flags], c="C0", s=28, label="Pareto")
        if front:
            fx, fy = zip(*front)
            ax.plot(fx, fy, c="C0", lw=1)
        if seed_doc:
            errs = [seed_doc[k] for k in ("mae_sbp", "mae_dbp") if k in seed_doc]
            ax.scatter([seed_doc["params"]], [float(np.mean(errs))], marker="*", c="C3", s=120, label="seed")
        ax.set_xscale("log")
        ax.set_xlabel("model size [parameters]")
        ax.set_ylabel("MAE [mmHg]")
        ax.legend(frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
