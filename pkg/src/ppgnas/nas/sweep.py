"""Lambda sweep over the size regularizer and Pareto filtering of the children."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..graph import Model, int8_size_bytes, mac_count, param_count, save_model
from ..graph.serialize import write_atomic
from ..training import TaskData, evaluate_forward, fit
from .supernet import discretize, expand_to_supernet
from .train import NasConfig, train_supernet

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(float(v) for v in np.logspace(-11, -7, 18))
CSV_COLUMNS = ("lambda", "params", "size_bytes", "macs", "mae_sbp", "mae_dbp", "seed", "pareto")


@dataclass
class ParetoPoint:
    lam: float
    mae_sbp: float
    mae_dbp: float
    params: int
    size_bytes: int
    macs: int
    seed: int = 0
    pareto: bool = False

    def error(self) -> float:
        """MAE used for dominance: the mean over whichever targets were evaluated."""
        vals = [v for v in (self.mae_sbp, self.mae_dbp) if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    def row(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["pareto"] = int(d["pareto"])
        return {k: d[k] for k in CSV_COLUMNS}


def pareto_flags(cost, error) -> np.ndarray:
    """Non-dominated mask for minimizing both ``cost`` and ``error``.

    A point is dominated if another is no worse in both and strictly better in
    one.  Exact duplicates are all kept.  O(n log n): sort by (cost, error)
    and sweep the running minimum error over strictly cheaper groups.
    """
    cost = np.asarray(cost, dtype=np.float64)
    error = np.asarray(error, dtype=np.float64)
    n = cost.size
    keep = np.zeros(n, dtype=bool)
    order = np.lexsort((error, cost))
    best = math.inf  # min error among strictly cheaper points
    i = 0
    while i < n:
        j = i
        while j < n and cost[order[j]] == cost[order[i]]:
            j += 1
        group = order[i:j]
        gmin = error[group[0]]  # sorted by error within equal cost
        for idx in group:
            keep[idx] = error[idx] == gmin and error[idx] < best
        best = min(best, gmin)
        i = j
    return keep


def pareto_filter(points: list[ParetoPoint]) -> list[ParetoPoint]:
    flags = pareto_flags([p.params for p in points], [p.error() for p in points])
    for p, f in zip(points, flags):
        p.pareto = bool(f)
    return [p for p in points if p.pareto]


def make_point(model: Model, lam: float, metrics: dict, seed: int) -> ParetoPoint:
    g = model.graph
    return ParetoPoint(lam, metrics.get("mae_sbp", math.nan), metrics.get("mae_dbp", math.nan), param_count(g),
                       int8_size_bytes(g), mac_count(g), seed)


def run_lambda(seed_model: Model, lam: float, train: TaskData, val: TaskData, test: TaskData,
               cfg: NasConfig, finetune_epochs: int = 10) -> tuple[Model, ParetoPoint]:
    """Expand, search, discretize and briefly fine-tune one child; evaluate on ``test``."""
    sn = expand_to_supernet(seed_model.copy(), rng_seed=cfg.seed)
    train_supernet(sn, train, val, NasConfig(**{**asdict(cfg), "lam": lam}))
    child = discretize(sn)
    if finetune_epochs:
        fit(child, train, finetune_epochs, cfg.batch_size, cfg.lr_weights, cfg.seed)
    child.meta["lambda"] = lam
    return child, make_point(child, lam, evaluate_forward(child.forward, child.meta, test), cfg.seed)


def read_csv(path) -> list[ParetoPoint]:
    points = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            points.append(ParetoPoint(float(r["lambda"]), float(r["mae_sbp"]), float(r["mae_dbp"]), int(r["params"]),
                                      int(r["size_bytes"]), int(r["macs"]), int(r["seed"]),
                                      bool(int(r.get("pareto") or 0))))
    return points


def write_csv(points: list[ParetoPoint], path) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for p in points:
        w.writerow(p.row())
    write_atomic(Path(path), buf.getvalue().encode())


def sweep(seed_model: Model, train: TaskData, val: TaskData, test: TaskData, lambdas=DEFAULT_LAMBDAS,
          cfg: NasConfig | None = None, finetune_epochs: int = 10, csv_path=None, child_dir=None,
          workers: int = 1) -> list[ParetoPoint]:
    """Run every lambda; the CSV is rewritten after each point, so an interrupted sweep resumes.

    Points already present in ``csv_path`` (same lambda and seed) are skipped.
    With ``workers > 1`` the lambdas run in separate processes; each child is
    a pure function of (seed model, data, lambda, cfg), so the results do not
    depend on the worker count.
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("need at least one lambda")
    cfg = cfg or NasConfig()
    done = read_csv(csv_path) if csv_path and Path(csv_path).exists() else []
    have = {(p.lam, p.seed) for p in done}
    points = list(done)
    todo = []
    for lam in lambdas:
        if any(math.isclose(lam, l, rel_tol=1e-9) and s == cfg.seed for l, s in have):
            log.info("lambda %.3e already in %s, skipping", lam, csv_path)
        else:
            todo.append(lam)

    def record(lam, child, point):
        log.info("lambda %.3e: params=%d mae=(%.3f, %.3f)", lam, point.params, point.mae_sbp, point.mae_dbp)
        points.append(point)
        pareto_filter(points)
        if child_dir is not None:
            save_model(child, Path(child_dir) / f"child_lambda_{lam:.3e}.ppgm")
        if csv_path:
            write_csv(points, csv_path)

    args = (train, val, test, cfg, finetune_epochs)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_lambda, seed_model, lam, *args): lam for lam in todo}
            for fut in as_completed(futures):
                record(futures[fut], *fut.result())
        points.sort(key=lambda p: (p.seed, p.lam))
    else:
        for lam in todo:
            record(lam, *run_lambda(seed_model, lam, *args))
    pareto_filter(points)
    if csv_path:
        write_csv(points, csv_path)
    return points


__all__ = ["CSV_COLUMNS", "DEFAULT_LAMBDAS", "ParetoPoint", "make_point", "pareto_filter", "pareto_flags",
           "read_csv", "run_lambda", "sweep", "write_csv"]
