"""Update rules: Adam, SGD with inverse-scaling decay, L2 penalty, early stopping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _check_congruent(params: dict, grads: dict):
    for k, p in params.items():
        if k not in grads:
            continue
        if np.shape(grads[k]) != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {np.shape(grads[k])}, parameter {p.shape}")
    extra = set(grads) - set(params)
    if extra:
        raise ValueError(f"gradients for unknown parameters {sorted(extra)}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update, applied to `params` in place.

    Parameters missing from `grads` are left untouched (their moments too).
    """
    _check_congruent(params, grads)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[k] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, params, grads):
        adam_step(self.state, params, grads)


@dataclass(frozen=True)
class SgdSchedule:
    lr0: float
    power: float = 0.25

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.power < 0:
            raise ValueError("decay power must be non-negative")

    def lr(self, t: int) -> float:
        if t < 1:
            raise ValueError("step count starts at 1")
        return self.lr0 / t ** self.power


def sgd_step(schedule: SgdSchedule, t: int, params: dict, grads: dict) -> None:
    _check_congruent(params, grads)
    lr = schedule.lr(t)
    for k, g in grads.items():
        params[k] -= lr * g


class Sgd:
    def __init__(self, lr0, power=0.25):
        self.schedule = SgdSchedule(lr0, power)
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        sgd_step(self.schedule, self.t, params, grads)


def l2_penalty(lam: float, params: dict, exclude=()) -> float:
    return lam * sum(float(np.sum(p * p)) for k, p in params.items() if k not in exclude)


def l2_grad(lam: float, params: dict, exclude=()) -> dict:
    """Gradient of lam * ||theta||^2; entries named in `exclude` (biases) get zeros."""
    if lam < 0:
        raise ValueError("l2 strength must be non-negative")
    return {k: (np.zeros_like(p) if k in exclude else 2.0 * lam * p) for k, p in params.items()}


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    val_fraction: float = 0.1
    metric: str = "objective"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


class EarlyStopper:
    """Tracks the best validation loss and a snapshot of the matching parameters."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.best_params = None
        self._bad = 0

    def update(self, epoch: int, val_loss: float, params: dict) -> bool:
        """Record one epoch; returns True when training should stop."""
        if np.isfinite(val_loss) and val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.best_params = {k: v.copy() for k, v in params.items()}
            self._bad = 0
        else:
            self._bad += 1
        return self._bad >= self.patience
