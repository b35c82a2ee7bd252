"""Alternating optimization of SuperNet weights (train split) and logits (val split)."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..tensor import Adam, ops
from ..training import TaskData, predict, run_epoch
from .supernet import NasError, SuperNet, expected_cost, nas_loss

log = logging.getLogger(__name__)


@dataclass
class NasConfig:
    lam: float = 0.0
    lr_weights: float = 1e-3
    lr_theta: float = 1e-2
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    freeze_theta: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise NasError(f"lambda must be non-negative, got {self.lam}")
        if self.epochs < 0 or self.batch_size < 1:
            raise NasError("epochs must be >= 0 and batch_size >= 1")


def train_supernet(sn: SuperNet, train: TaskData, val: TaskData, cfg: NasConfig) -> list[dict]:
    """Per epoch: a weight pass over ``train`` (theta fixed), then a theta pass over ``val``.

    The theta pass runs BatchNorm in batch-statistics mode but leaves its
    running statistics alone, so the val split never leaks into them.
    Returns the per-epoch training curve.
    """
    if len(train) == 0 or len(val) == 0:
        raise NasError("train and val splits must both be non-empty")
    rng = np.random.default_rng(cfg.seed)
    w_opt = Adam(sn.weight_params(), lr=cfg.lr_weights)
    t_opt = Adam(sn.theta_params(), lr=cfg.lr_theta)

    def weight_loss(x, y):
        return ops.mse_loss(sn.forward(x, training=True), y)

    def theta_loss(x, y):
        return nas_loss(sn.forward(x, training=True, update_stats=False), y, expected_cost(sn), cfg.lam)

    history = []
    for epoch in range(cfg.epochs):
        for t in sn.theta_params():
            t.requires_grad = False
        row = {"epoch": epoch, "train_mse": run_epoch(weight_loss, w_opt, train, cfg.batch_size, rng, "weight phase")}
        for t in sn.theta_params():
            t.requires_grad = True
        if not cfg.freeze_theta:
            for p in sn.weight_params():
                p.requires_grad = False
            try:
                row["val_loss"] = run_epoch(theta_loss, t_opt, val, cfg.batch_size, rng, "architecture phase")
            finally:
                for p in sn.weight_params():
                    p.requires_grad = True
        row["expected_cost"] = float(expected_cost(sn).data)
        log.debug("nas epoch %d %s", epoch, row)
        history.append(row)
    return history


def val_mse(forward, data: TaskData) -> float:
    return float(np.mean((predict(forward, data.x) - data.y) ** 2))
