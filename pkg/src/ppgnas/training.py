"""Task plumbing shared by seed training, NAS and QAT: targets, batching, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import WindowSet, mae
from .tensor import Adam, NumericalError, Tensor, no_grad, ops

log = logging.getLogger(__name__)

TARGETS = ("sbp", "dbp", "sig2sig")
BP_SCALE = 200.0  # mmHg per normalized unit


@dataclass
class TaskData:
    x: np.ndarray  # [N, 1, L] float32
    y: np.ndarray  # [N, 1] or [N, 1, L], normalized
    sbp: np.ndarray  # [N] mmHg reference labels
    dbp: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def batch(self, idx) -> tuple[Tensor, np.ndarray]:
        return Tensor(self.x[idx]), self.y[idx]


def target_offset(ws: WindowSet, target: str) -> float:
    """Mean of the training targets in mmHg, subtracted before scaling."""
    if target == "sig2sig":
        if not ws.has_abp:
            raise ValueError("sig2sig models need ABP waveforms; this dataset only has scalar labels")
        return float(ws.abp.mean())
    return float(getattr(ws, target).mean())


def prepare(ws: WindowSet, target: str, input_len: int, offset: float, scale: float = BP_SCALE) -> TaskData:
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; expected one of {TARGETS}")
    if len(ws) == 0:
        raise ValueError("empty window set")
    if ws.length < input_len:
        raise ValueError(f"windows have {ws.length} samples but the model expects {input_len}")
    x = ws.ppg[:, None, :input_len].astype(np.float32)
    if target == "sig2sig":
        if not ws.has_abp:
            raise ValueError("sig2sig models need ABP waveforms; this dataset only has scalar labels")
        abp = ws.abp[:, :input_len].astype(np.float64)
        y = ((abp - offset) / scale)[:, None, :].astype(np.float32)
        return TaskData(x, y, abp.max(axis=1), abp.min(axis=1))
    lab = getattr(ws, target).astype(np.float64)
    y = ((lab - offset) / scale)[:, None].astype(np.float32)
    return TaskData(x, y, ws.sbp.astype(np.float64), ws.dbp.astype(np.float64))


def check_finite(loss: Tensor, where: str) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"non-finite loss during {where}; lower the learning rate or check the inputs")


def run_epoch(loss_fn: Callable[[Tensor, np.ndarray], Tensor], opt: Adam, data: TaskData, batch_size: int,
              rng: np.random.Generator, where: str = "training") -> float:
    """One shuffled pass; returns the mean batch loss."""
    if len(data) == 0:
        raise ValueError(f"empty split during {where}")
    order = rng.permutation(len(data))
    total, count = 0.0, 0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x, y = data.batch(idx)
        opt.zero_grad()
        loss = loss_fn(x, y)
        check_finite(loss, where)
        loss.backward()
        opt.step()
        total += float(loss.data) * idx.size
        count += idx.size
    return total / count


def predict(forward: Callable[[Tensor], Tensor], x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    outs = []
    with no_grad():
        for start in range(0, x.shape[0], batch_size):
            outs.append(forward(Tensor(x[start:start + batch_size])).data)
    return np.concatenate(outs).astype(np.float64)


def to_mmhg(pred: np.ndarray, meta: dict) -> dict[str, np.ndarray]:
    """Normalized outputs to per-window (sbp, dbp) predictions in mmHg."""
    vals = pred * meta["target_scale"] + meta["target_offset"]
    if meta["target"] == "sig2sig":
        series = vals.reshape(vals.shape[0], -1)
        return {"sbp": series.max(axis=1), "dbp": series.min(axis=1)}
    return {meta["target"]: vals.reshape(-1)}


def evaluate_forward(forward: Callable[[Tensor], Tensor], meta: dict, data: TaskData) -> dict[str, float]:
    preds = to_mmhg(predict(forward, data.x), meta)
    return {f"mae_{k}": mae(v, getattr(data, k)) for k, v in preds.items()}


def fit(model, train: TaskData, epochs: int, batch_size: int = 128, lr: float = 1e-3, seed: int = 0,
        val: TaskData | None = None) -> list[dict]:
    """Adam on all float weights of ``model`` with the MSE task loss."""
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=lr)
    history = []

    def loss_fn(x, y):
        return ops.mse_loss(model.forward(x, training=True), y)

    for epoch in range(epochs):
        row = {"epoch": epoch, "train_loss": run_epoch(loss_fn, opt, train, batch_size, rng)}
        if val is not None:
            row["val_loss"] = float(np.mean((predict(model.forward, val.x) - val.y) ** 2))
        log.debug("epoch %d %s", epoch, row)
        history.append(row)
    return history
