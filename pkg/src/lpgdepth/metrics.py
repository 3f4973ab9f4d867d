"""Threshold accuracies and error metrics over masked depth maps.

Per-image reports are computed over the scored pixel set (in the mask and
with ground truth inside the cap range); dataset reports average the
per-image values. Sums use ``math.fsum`` so the result does not depend on
summation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

THRESHOLDS = (1.25, 1.25**2, 1.25**3)
COLUMNS = ("delta1", "delta2", "delta3", "abs_rel", "sq_rel", "rmse", "rmse_log", "log10", "t_count")


@dataclass(frozen=True)
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float
    t_count: int

    def as_dict(self) -> dict:
        return asdict(self)

    def tsv_row(self) -> str:
        values = [getattr(self, c) for c in COLUMNS]
        return "\t".join(str(v) if isinstance(v, int) else f"{v:.6f}" for v in values)

    @staticmethod
    def tsv_header() -> str:
        return "\t".join(COLUMNS)


@dataclass(frozen=True)
class EvalConfig:
    """Ground truth outside ``[min_cap, max_cap]`` is skipped; predictions are clamped into it."""

    min_cap: float = 1e-3
    max_cap: float = 10.0

    def __post_init__(self):
        if not 0 < self.min_cap < self.max_cap:
            raise ValueError(f"cap range must satisfy 0 < min_cap < max_cap, got ({self.min_cap}, {self.max_cap})")


def scored_pixels(pred, gt, mask, cfg: EvalConfig) -> tuple[np.ndarray, np.ndarray]:
    """Float64 ``(pred, gt)`` vectors over the scored pixel set."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not (pred.shape == gt.shape == mask.shape):
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    keep = mask & (gt >= cfg.min_cap) & (gt <= cfg.max_cap)
    if not keep.any():
        raise ValueError(f"no pixels to score: mask and cap range [{cfg.min_cap}, {cfg.max_cap}] leave nothing")
    return np.clip(pred[keep], cfg.min_cap, cfg.max_cap), gt[keep]


def compute_metrics(pred, gt, mask=None, cfg: EvalConfig = EvalConfig()) -> MetricsReport:
    p, d = scored_pixels(pred, gt, mask, cfg)
    t = p.size
    ratio = np.maximum(p / d, d / p)
    deltas = [np.count_nonzero(ratio < thr) / t for thr in THRESHOLDS]
    diff = p - d
    log_diff = np.log(p) - np.log(d)
    log10_diff = np.abs(np.log10(p) - np.log10(d))
    return MetricsReport(
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        abs_rel=math.fsum(np.abs(diff) / d) / t,
        sq_rel=math.fsum(diff * diff / d) / t,
        rmse=math.sqrt(math.fsum(diff * diff) / t),
        rmse_log=math.sqrt(math.fsum(log_diff * log_diff) / t),
        log10=math.fsum(log10_diff) / t,
        t_count=t,
    )


def mean_report(reports: Sequence[MetricsReport] | Iterable[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of per-image reports; ``t_count`` is the total pixel count."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot average an empty list of reports")
    n = len(reports)
    values = {}
    for f in fields(MetricsReport):
        column = [getattr(r, f.name) for r in reports]
        values[f.name] = sum(column) if f.name == "t_count" else math.fsum(column) / n
    return MetricsReport(**values)


def evaluate_batch(preds, gts, masks, cfg: EvalConfig) -> MetricsReport:
    """Per-image metrics over leading-axis stacks, averaged over images."""
    return mean_report(compute_metrics(p, g, m, cfg) for p, g, m in zip(preds, gts, masks))
