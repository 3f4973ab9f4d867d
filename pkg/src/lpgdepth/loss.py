"""Scale-invariant log loss over valid ground-truth pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ops
from .core.gradcheck import register_case
from .core.tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.85
    alpha: float = 10.0
    min_depth: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha <= 0 or self.min_depth <= 0:
            raise ValueError("alpha and min_depth must be positive")


@dataclass
class LossBreakdown:
    g: Tensor
    T: int
    D: Tensor
    L: Tensor


def silog_loss(pred: Tensor, gt, mask, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """``D = mean(g^2) - lam * mean(g)^2`` and ``L = alpha * sqrt(D)`` with ``g = ln(pred) - ln(gt)``.

    Predictions are floored at ``cfg.min_depth`` before the log. ``gt`` and
    ``mask`` are plain arrays shaped like ``pred``.
    """
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if gt.shape != pred.shape or mask.shape != pred.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    T = int(mask.sum())
    if T == 0:
        raise ValueError("loss mask selects no pixels")
    gt_valid = gt[mask]
    if np.any(gt_valid <= 0):
        raise ValueError("ground truth must be positive inside the mask")

    log_pred = ops.log(ops.clamp_min(ops.masked_select(pred, mask), cfg.min_depth))
    g = ops.sub(log_pred, Tensor(np.log(gt_valid)))
    mean_sq = ops.mul_scalar(ops.sum(ops.mul(g, g)), 1.0 / T)
    total = ops.sum(g)
    D = ops.sub(mean_sq, ops.mul_scalar(ops.mul(total, total), cfg.lam / (T * T)))
    L = ops.mul_scalar(ops.safe_sqrt(D), cfg.alpha)
    return LossBreakdown(g=g, T=T, D=D, L=L)


def variance_form(g, lam: float) -> float:
    """``Var(g) + (1 - lam) * mean(g)^2`` in float64."""
    g = np.asarray(g, dtype=np.float64).ravel()
    if g.size == 0:
        raise ValueError("g must be non-empty")
    mean = g.mean()
    return float(np.mean((g - mean) ** 2) + (1.0 - lam) * mean * mean)


def _silog_case(rng: np.random.Generator):
    shape = (1, 1, 3, 3)
    gt = rng.uniform(1.0, 5.0, size=shape)
    mask = rng.random(shape) < 0.8
    mask.flat[0] = True
    pred = Tensor(gt * rng.uniform(0.5, 1.5, size=shape), requires_grad=True)
    return (lambda p: silog_loss(p, gt, mask).L), [pred]


register_case("silog_loss", _silog_case)
