"""Adam with bias correction and the polynomial learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core.tensor import DTYPE, Tensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-6


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPSILON

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One in-place Adam update of every parameter in ``params``."""
    state.t += 1
    # Both (1 - beta) and the bias corrections come from float64 so that the
    # first step divides matching roundings and is exactly lr / (1 + eps).
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    a1, a2 = DTYPE(1.0 - state.beta1), DTYPE(1.0 - state.beta2)
    c1 = DTYPE(1.0 - state.beta1 ** state.t)
    c2 = DTYPE(1.0 - state.beta2 ** state.t)
    lr32, eps = DTYPE(lr), DTYPE(state.epsilon)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise ValueError(f"optimizer state for {name!r} has shape {m.shape}, parameter has {p.data.shape}")
        m *= b1
        m += a1 * g
        v *= b2
        v += a2 * g * g
        p.data -= lr32 * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-4
    power: float = 0.9
    total_steps: int = 1


def poly_lr(schedule: LrSchedule, step: int) -> float:
    """``base_lr * (1 - step / total_steps) ** power``; zero at or past the end."""
    if step >= schedule.total_steps:
        return 0.0
    return schedule.base_lr * (1.0 - max(step, 0) / schedule.total_steps) ** schedule.power
