"""Train the architecture variants on shared data and compare them."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .config import RunConfig
from .metrics import COLUMNS, MetricsReport
from .network import DepthNet
from .synthdata import Dataset

log = logging.getLogger(__name__)

# Overrides may only change the architecture or the loss weighting; data,
# seed and optimizer budget stay shared across the plan.
ALLOWED_OVERRIDES = frozenset({"variant", "lam"})


class AblationError(RuntimeError):
    def __init__(self, name: str, cause: BaseException):
        super().__init__(f"variant {name!r} failed: {cause}")
        self.name = name


@dataclass(frozen=True)
class AblationEntry:
    name: str
    overrides: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class AblationPlan:
    base: RunConfig
    entries: tuple[AblationEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if not names:
            raise ValueError("ablation plan has no entries")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate entry names in {names}")
        for e in self.entries:
            bad = set(e.overrides) - ALLOWED_OVERRIDES
            if bad:
                raise ValueError(f"entry {e.name!r} overrides shared settings {sorted(bad)}")

    @classmethod
    def default(cls, base: RunConfig) -> "AblationPlan":
        return cls(
            base,
            (
                AblationEntry("baseline", {"variant": "baseline"}),
                AblationEntry("aspp", {"variant": "aspp"}),
                AblationEntry("aspp_upconv", {"variant": "aspp_upconv"}),
                AblationEntry("full", {"variant": "full"}),
                AblationEntry("full_lambda0.5", {"variant": "full", "lam": 0.5}),
            ),
        )

    def config(self, entry: AblationEntry) -> RunConfig:
        return self.base.replace(**entry.overrides)

    def subset(self, names: Sequence[str]) -> "AblationPlan":
        known = {e.name: e for e in self.entries}
        missing = [n for n in names if n not in known]
        if missing:
            raise ValueError(f"unknown plan entries {missing}; known: {list(known)}")
        return AblationPlan(self.base, tuple(known[n] for n in names))


@dataclass(frozen=True)
class AblationRow:
    name: str
    variant: str
    lam: float
    params: int
    report: MetricsReport


def param_count(cfg: RunConfig) -> int:
    return DepthNet(cfg.model_config()).num_params()


def run_ablation(
    plan: AblationPlan,
    train_set: Dataset,
    val_set: Dataset,
    work_dir: Optional[str | os.PathLike] = None,
    reuse: Optional[Mapping[str, MetricsReport]] = None,
) -> list[AblationRow]:
    """Train every entry and return rows sorted by held-out RMSE (best first).

    ``reuse`` maps entry names to reports already measured for the identical
    config (training is deterministic, so rerunning would reproduce them).
    """
    from .train import train

    rows = []
    for entry in plan.entries:
        cfg = plan.config(entry)
        if reuse and entry.name in reuse:
            report = reuse[entry.name]
        else:
            ckpt = log_path = None
            if work_dir is not None:
                Path(work_dir).mkdir(parents=True, exist_ok=True)
                ckpt = Path(work_dir) / f"{entry.name}.ckpt"
                log_path = Path(work_dir) / f"{entry.name}.loss.tsv"
            log.info("training %s (%s, lambda=%s)", entry.name, cfg.variant, cfg.lam)
            try:
                report = train(cfg, train_set, val_set, ckpt, log_path).report
            except Exception as exc:
                raise AblationError(entry.name, exc) from exc
        rows.append(AblationRow(entry.name, cfg.variant, cfg.lam, param_count(cfg), report))
    return sorted(rows, key=lambda r: r.report.rmse)


TABLE_COLUMNS = ("name", "variant", "lambda", "params") + COLUMNS


def format_table(rows: Sequence[AblationRow]) -> str:
    lines = ["\t".join(TABLE_COLUMNS)]
    for r in rows:
        lines.append(f"{r.name}\t{r.variant}\t{r.lam}\t{r.params}\t{r.report.tsv_row()}")
    return "\n".join(lines) + "\n"
