"""Central-difference gradient checking for registered ops."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import DTYPE, ComputationRecord, Function, Tensor


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-3,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between backward and central differences.

    The op output is projected onto a fixed random +/-1 direction so every
    output element contributes without amplifying float32 rounding. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``; the maximum over all
    coordinates of all ``requires_grad`` inputs is returned.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = rng or np.random.default_rng(0)
    with ComputationRecord():
        probe = fn(*inputs)
    weights = rng.choice([-1.0, 1.0], size=probe.shape)

    def objective() -> float:
        return float(np.sum(fn(*inputs).data.astype(np.float64) * weights))

    for t in inputs:
        if t.requires_grad:
            t.zero_grad()
    with ComputationRecord() as rec:
        out = fn(*inputs)
        loss = ops.sum(ops.mul(out, Tensor(weights)))
    rec.backward(loss)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1).astype(np.float64)
        for idx in range(flat.size):
            orig = flat[idx]
            plus = DTYPE(orig + DTYPE(h))
            minus = DTYPE(orig - DTYPE(h))
            flat[idx] = plus
            f_plus = objective()
            flat[idx] = minus
            f_minus = objective()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (float(plus) - float(minus))
            err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def _rand(rng, *shape, low=-1.0, high=1.0, grad=True) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=grad)


def _away_from(rng, shape, point: float, margin: float, spread: float = 1.5) -> Tensor:
    """Random values with |x - point| >= margin, for ops with a kink at ``point``."""
    mag = rng.uniform(margin, spread, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(point + sign * mag, requires_grad=True)


def _positive(rng, *shape, low=0.5, high=2.0) -> Tensor:
    return _rand(rng, *shape, low=low, high=high)


# Each case builds (fn, inputs) at a fresh random sample point.
CASES: dict[str, Callable[[np.random.Generator], tuple]] = {
    "add": lambda r: (ops.add, [_rand(r, 2, 3), _rand(r, 1, 3)]),
    "sub": lambda r: (ops.sub, [_rand(r, 2, 3), _rand(r, 2, 1)]),
    "mul": lambda r: (ops.mul, [_rand(r, 2, 3), _rand(r, 2, 3)]),
    "div": lambda r: (ops.div, [_rand(r, 2, 3), _positive(r, 2, 3)]),
    "neg": lambda r: (ops.neg, [_rand(r, 4)]),
    "add_scalar": lambda r: (lambda a: ops.add_scalar(a, 0.7), [_rand(r, 4)]),
    "mul_scalar": lambda r: (lambda a: ops.mul_scalar(a, 3.0), [_rand(r, 4)]),
    "pow_scalar": lambda r: (lambda a: ops.pow_scalar(a, 2.5), [_positive(r, 5)]),
    "exp": lambda r: (ops.exp, [_rand(r, 5)]),
    "log": lambda r: (ops.log, [_positive(r, 5)]),
    "safe_sqrt": lambda r: (ops.safe_sqrt, [_positive(r, 5)]),
    "sin": lambda r: (ops.sin, [_rand(r, 5, low=-3, high=3)]),
    "cos": lambda r: (ops.cos, [_rand(r, 5, low=-3, high=3)]),
    "sigmoid": lambda r: (ops.sigmoid, [_rand(r, 6, low=-4, high=4)]),
    "elu": lambda r: (ops.elu, [_away_from(r, (6,), 0.0, 0.01)]),
    "clamp_min": lambda r: (lambda a: ops.clamp_min(a, 0.2), [_away_from(r, (6,), 0.2, 0.01)]),
    "sum": lambda r: (lambda a: ops.sum(a, axis=1), [_rand(r, 2, 3, 2)]),
    "reshape": lambda r: (lambda a: ops.reshape(a, (3, 4)), [_rand(r, 2, 6)]),
    "narrow": lambda r: (lambda a: ops.narrow(a, 1, 1, 2), [_rand(r, 2, 4, 2)]),
    "concat": lambda r: (lambda a, b: ops.concat([a, b], axis=1), [_rand(r, 1, 2, 2), _rand(r, 1, 3, 2)]),
    "masked_select": lambda r: (
        (lambda m: (lambda a: ops.masked_select(a, m)))(r.random((3, 4)) < 0.6),
        [_rand(r, 3, 4)],
    ),
    "conv2d": lambda r: (
        lambda x, w, b: ops.conv2d(x, w, b, stride=2, dilation=2, padding=2),
        [_rand(r, 2, 2, 5, 5), _rand(r, 3, 2, 3, 3), _rand(r, 3)],
    ),
    "upconv2d": lambda r: (ops.upconv2d, [_rand(r, 1, 2, 2, 3), _rand(r, 3, 2, 3, 3), _rand(r, 3)]),
    "nearest_upsample": lambda r: (lambda a: ops.nearest_upsample(a, 2), [_rand(r, 1, 2, 2, 3)]),
    "downsample_nearest": lambda r: (lambda a: ops.downsample_nearest(a, 2), [_rand(r, 1, 2, 4, 4)]),
}


def register_case(name: str, factory: Callable[[np.random.Generator], tuple]) -> None:
    CASES[name] = factory


@dataclass
class CheckResult:
    name: str
    max_error: float
    points: int
    passed: bool


def check_op(name: str, points: int, tol: float = 1e-3, h: float = 1e-3, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(points):
        fn, inputs = CASES[name](rng)
        worst = max(worst, gradcheck(fn, inputs, h=h, rng=rng))
    return CheckResult(name, float(worst), points, bool(worst < tol))


def run_suite(points: int = 10, tol: float = 1e-3, seed: int = 0) -> list[CheckResult]:
    """Check every registered op plus any extra registered cases."""
    # Importing these registers lpg_expand and the end-to-end loss case.
    from .. import loss, lpg  # noqa: F401

    missing = sorted(set(Function.registry) - set(CASES))
    if missing:
        raise RuntimeError(f"no gradcheck case for registered ops: {', '.join(missing)}")
    return [check_op(name, points, tol=tol, seed=seed) for name in sorted(CASES)]


def format_table(results: Sequence[CheckResult], elapsed: Optional[float] = None) -> str:
    lines = [f"{'op':<20} {'points':>6} {'max_rel_err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.points:>6} {r.max_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    if elapsed is not None:
        lines.append(f"{len(results)} checks in {elapsed:.1f}s")
    return "\n".join(lines)


def timed_suite(points: int = 10, tol: float = 1e-3, seed: int = 0) -> tuple[list[CheckResult], float]:
    start = time.perf_counter()
    results = run_suite(points=points, tol=tol, seed=seed)
    return results, time.perf_counter() - start
