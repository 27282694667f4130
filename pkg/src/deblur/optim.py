"""AdamW with decoupled weight decay and a reduce-on-plateau LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamwHyper:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("eps must be positive and weight_decay nonnegative")


@dataclass(frozen=True)
class AdamwState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamwState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adamw_step(params, grads, state: AdamwState, hyper: AdamwHyper):
    """One AdamW update. Returns ``(new_params, new_state)``; inputs are not modified."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state have different lengths")
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}/{v.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        step = m_hat / (np.sqrt(v_hat) + hyper.eps) + hyper.weight_decay * p
        new_p.append((p - hyper.lr * step).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return new_p, AdamwState(new_m, new_v, t)


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping; ``lr`` is the current learning rate."""

    lr: float
    patience: int = 4
    factor: float = 0.5
    min_lr: float = 1e-6
    threshold: float = 1e-5
    mode: str = "max"
    best: float | None = None
    bad_epochs: int = 0

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError(f"patience must be nonnegative, got {self.patience}")
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.mode not in ("max", "min"):
            raise ValueError(f"mode must be 'max' or 'min', got {self.mode!r}")
        self.lr = max(self.lr, self.min_lr)


def plateau_step(state: PlateauState, metric: float) -> float:
    """Feed one epoch's monitored metric; returns the (possibly reduced) lr."""
    if state.best is None:
        improved = not math.isnan(metric)
    elif state.mode == "max":
        improved = metric > state.best + state.threshold
    else:
        improved = metric < state.best - state.threshold
    if improved:
        state.best = metric
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs > state.patience:
            state.lr = max(state.lr * state.factor, state.min_lr)
            state.bad_epochs = 0
    return state.lr
