"""Single-threaded training loop, prediction and held-out evaluation."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import checkpoint
from .config import RunConfig
from .core.tensor import ComputationRecord, Tensor
from .loss import silog_loss
from .metrics import EvalConfig, MetricsReport, compute_metrics, mean_report
from .network import DepthNet
from .optim import AdamState, adam_step, poly_lr
from .synthdata import Dataset, batch_from

log = logging.getLogger(__name__)

LOG_HEADER = "step\tlr\tloss"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


@dataclass
class TrainResult:
    model: DepthNet
    state: AdamState
    steps: int
    losses: list[float] = field(default_factory=list)
    report: Optional[MetricsReport] = None


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of batches drawn from back-to-back random permutations."""
    pending = np.empty(0, dtype=np.int64)
    while True:
        while pending.size < batch_size:
            pending = np.concatenate([pending, rng.permutation(n)])
        yield pending[:batch_size]
        pending = pending[batch_size:]


def check_compatible(model: DepthNet, dataset: Dataset) -> None:
    cfg = model.cfg
    expected = (cfg.input_channels, *cfg.input_size)
    got = tuple(dataset.images.shape[1:])
    if got != expected:
        raise ValueError(f"data samples are shaped {got} but the model expects {expected}")


def predict(model: DepthNet, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Depth maps ``(N, H, W)`` for an image stack ``(N, C, H, W)``; no graph is recorded."""
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model(Tensor(images[start:start + batch_size])).depth.numpy()[:, 0])
    return np.concatenate(out) if out else np.empty((0, *images.shape[2:]), dtype=np.float32)


def evaluate(model: DepthNet, dataset: Dataset, cfg: EvalConfig) -> MetricsReport:
    check_compatible(model, dataset)
    preds = predict(model, dataset.images)
    return mean_report(compute_metrics(p, d, m, cfg) for p, d, m in zip(preds, dataset.depths, dataset.masks))


def periodic_path(final: Path, step: int) -> Path:
    return final.with_name(f"{final.stem}.step{step:06d}{final.suffix}")


def train(
    cfg: RunConfig,
    train_set: Dataset,
    val_set: Optional[Dataset] = None,
    out_checkpoint: Optional[str | os.PathLike] = None,
    log_path: Optional[str | os.PathLike] = None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Run ``cfg.steps`` Adam steps; writes the loss log and checkpoints when paths are given.

    The pooled log loss over each batch is minimized. Data order and
    augmentation draw from one generator seeded by ``cfg.seed``, so a rerun
    with the same config and data reproduces every step bit for bit.
    """
    model = DepthNet(cfg.model_config())
    check_compatible(model, train_set)
    if val_set is not None:
        check_compatible(model, val_set)
    state = AdamState.for_params(model.params)
    schedule = cfg.schedule()
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng([cfg.seed, 1])
    batches = batch_indices(len(train_set), cfg.batch_size, rng)
    final = Path(out_checkpoint) if out_checkpoint is not None else None
    result = TrainResult(model, state, 0)

    log_file = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        if log_file:
            log_file.write(LOG_HEADER + "\n")
        for step in range(cfg.steps):
            idx = next(batches)
            images, depths, masks = batch_from(train_set, idx, rng if cfg.augment else None)
            lr = poly_lr(schedule, step)
            model.zero_grad()
            with ComputationRecord() as rec:
                out = model(Tensor(images))
                loss = silog_loss(out.depth, depths, masks, loss_cfg).L
            value = float(loss.item())
            if log_file:
                log_file.write(f"{step}\t{lr!r}\t{value!r}\n")
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            rec.backward(loss)
            adam_step(model.params, {n: p.grad for n, p in model.params.items()}, state, lr)
            result.losses.append(value)
            result.steps = step + 1
            if progress:
                progress(step, value)
            if final is not None and cfg.checkpoint_every and result.steps % cfg.checkpoint_every == 0:
                checkpoint.save(periodic_path(final, result.steps), checkpoint.from_model(model, state, result.steps))
        if final is not None:
            checkpoint.save(final, checkpoint.from_model(model, state, result.steps))
        if val_set is not None:
            result.report = evaluate(model, val_set, cfg.eval_config())
            if log_file:
                log_file.write(f"# eval\t{MetricsReport.tsv_header()}\n")
                log_file.write(f"# eval\t{result.report.tsv_row()}\n")
    finally:
        if log_file:
            log_file.close()
    return result


def read_loss_log(path: str | os.PathLike) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != LOG_HEADER:
            raise ValueError(f"{path}: unexpected loss log header {header!r}")
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            step, lr, loss = line.rstrip("\n").split("\t")
            rows.append((int(step), float(lr), float(loss)))
    return rows
