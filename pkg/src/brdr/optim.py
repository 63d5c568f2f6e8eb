"""Adam and floor-division step-decay learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamGradient
from .errors import NumericalDivergenceError


@dataclass
class LrSchedule:
    base: float
    gamma: float = 1.0
    interval: int = 1

    def __post_init__(self):
        if not self.base > 0:
            raise ValueError("base learning rate must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")

    def __call__(self, t: int) -> float:
        return lr_at(self, t)


def lr_at(schedule: LrSchedule, t: int) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return schedule.base * schedule.gamma ** (t // schedule.interval)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def zeros(cls, n: int, dtype=np.float64, **kw) -> "AdamState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), **kw)


def adam_step(state: AdamState, theta: np.ndarray, grad, lr: float,
              iteration: int | None = None) -> np.ndarray:
    """One in-place Adam update of the flat parameter vector ``theta``."""
    g = grad.vector if isinstance(grad, ParamGradient) else np.asarray(grad)
    if g.shape != theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {theta.shape}")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if not np.isfinite(g).all():
        raise NumericalDivergenceError("non-finite gradient", iteration)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    mhat = state.m / (1.0 - b1 ** state.step)
    vhat = state.v / (1.0 - b2 ** state.step)
    theta -= (lr * mhat / (np.sqrt(vhat) + state.epsilon)).astype(theta.dtype, copy=False)
    return theta
