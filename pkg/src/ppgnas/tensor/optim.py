from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import AutogradError, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(param.shape), np.zeros(param.shape), lr=lr, **kw)


def adam_step(param: Tensor, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``param`` and ``state``."""
    if param.grad is None:
        raise AutogradError("adam_step: parameter has no gradient; call backward() first")
    if state.m.shape != param.shape:
        raise ValueError(f"adam_step: state shape {state.m.shape} != parameter shape {param.shape}")
    g = param.grad.astype(np.float64)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.data = (param.data.astype(np.float64) - update).astype(param.data.dtype)


@dataclass
class Adam:
    """Adam over a fixed parameter list; parameters without a gradient are skipped."""

    params: list[Tensor]
    lr: float = 1e-3
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.states = [AdamState.for_param(p, lr=self.lr) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_step(p, s)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
