"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key has a default; unknown
keys, repeated keys and malformed values are errors that name the line.

Keys and defaults:

=================  ====================  ==========================================
key                default               meaning
=================  ====================  ==========================================
base_width         16                    encoder width at H/2 (even, >= 4)
kappa              10.0                  maximum depth
input_size         64x64                 H x W, multiples of 8
input_channels     1                     1 (gray) or 3
aspp_rates         3,6,12,18,24          dilation rates; rates >= the H/8 extent are dropped
variant            full                  baseline | aspp | aspp_upconv | full
base_lr            1e-4                  initial learning rate
power              0.9                   polynomial decay power
steps              5000                  optimizer steps
batch_size         8
data_dir           (empty)               training set directory (CLI flag overrides)
val_dir            (empty)               held-out set directory for the final eval
augment            on                    on | off: flips and brightness / contrast jitter
gt_dropout         0.0                   fraction of ground-truth pixels masked out
n_train            256                   scenes written by gen-data for training
n_val              64                    scenes written by gen-data for the held-out split
lambda             0.85                  variance weight of the log loss
alpha              10.0                  loss scale
min_depth          1e-3                  predictions are clamped here before the log
min_cap            1e-3                  evaluation cap range, lower end
max_cap            0                     evaluation cap range, upper end (0 means kappa)
seed               0                     model init, data order and augmentation
checkpoint_every   0                     periodic checkpoint interval in steps (0 = final only)
=================  ====================  ==========================================
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any

from .loss import LossConfig
from .metrics import EvalConfig
from .network import VARIANTS, ModelConfig
from .optim import LrSchedule
from .synthdata import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    base_width: int = 16
    kappa: float = 10.0
    input_size: tuple[int, int] = (64, 64)
    input_channels: int = 1
    aspp_rates: tuple[int, ...] = (3, 6, 12, 18, 24)
    variant: str = "full"
    base_lr: float = 1e-4
    power: float = 0.9
    steps: int = 5000
    batch_size: int = 8
    data_dir: str = ""
    val_dir: str = ""
    augment: bool = True
    gt_dropout: float = 0.0
    n_train: int = 256
    n_val: int = 64
    lam: float = field(default=0.85, metadata={"key": "lambda"})
    alpha: float = 10.0
    min_depth: float = 1e-3
    min_cap: float = 1e-3
    max_cap: float = 0.0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.base_lr < 0 or self.power <= 0:
            raise ConfigError("base_lr must be >= 0 and power > 0")
        if not 0.0 <= self.gt_dropout < 1.0:
            raise ConfigError("gt_dropout must lie in [0, 1)")
        if self.checkpoint_every < 0 or self.n_train < 1 or self.n_val < 0:
            raise ConfigError("checkpoint_every must be >= 0, n_train >= 1 and n_val >= 0")
        # Surface model / loss / eval constraints at parse time.
        try:
            self.model_config()
            self.loss_config()
            self.eval_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_channels=self.input_channels,
            base_width=self.base_width,
            aspp_rates=tuple(self.aspp_rates),
            kappa=self.kappa,
            input_size=tuple(self.input_size),
            seed=self.seed,
            variant=self.variant,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, alpha=self.alpha, min_depth=self.min_depth)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.min_cap, self.max_cap if self.max_cap > 0 else self.kappa)

    def schedule(self) -> LrSchedule:
        return LrSchedule(base_lr=self.base_lr, power=self.power, total_steps=max(self.steps, 1))

    def synth_config(self) -> SynthConfig:
        h, w = self.input_size
        return SynthConfig(width=w, height=h, kappa=self.kappa, gt_dropout=self.gt_dropout)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            key = _key(f)
            lines.append(f"{key} = {_format(key, getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _key(f: dataclasses.Field) -> str:
    return f.metadata.get("key", f.name)


_FIELDS = {_key(f): f for f in dataclasses.fields(RunConfig)}


def _format(key: str, value: Any) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if key == "input_size":
        return f"{value[0]}x{value[1]}"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(key: str, raw: str) -> Any:
    f = _FIELDS[key]
    default = f.default
    if key == "input_size":
        parts = raw.lower().split("x")
        if len(parts) != 2:
            raise ValueError("expected HxW, e.g. 64x64")
        return (int(parts[0]), int(parts[1]))
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("on", "true", "yes", "1"):
            return True
        if lowered in ("off", "false", "no", "0"):
            return False
        raise ValueError("expected on or off")
    if isinstance(default, tuple):
        return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, Any] = {}
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: key {key!r} already set on line {seen[key]}")
        try:
            values[_FIELDS[key].name] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value {raw!r} for {key!r}: {exc}") from None
        seen[key] = lineno
    return RunConfig(**values)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Parse a config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), source=str(path))
