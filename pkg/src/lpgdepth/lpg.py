"""Local planar guidance: per-cell plane coefficients expanded to k x k depth cues.

Each cell of an ``H/k x W/k`` map carries two angles and a distance. The angles
give a unit normal ``n`` and the distance ``n4`` (in ``(0, kappa)``) closes the
plane. Pixel ``(i, j)`` of the cell's ``k x k`` patch sits at patch-normalized
coordinates ``u = (j + 0.5) / k``, ``v = (i + 0.5) / k`` and receives the depth
where the ray ``(u, v, 1)`` meets the plane: ``n4 / (n1 u + n2 v + n3)``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import ops
from .core.gradcheck import register_case
from .core.tensor import DTYPE, ComputationRecord, Function, Tensor

EPS = 1e-4


@dataclass(frozen=True)
class PatchGrid:
    k: int
    u: np.ndarray
    v: np.ndarray


@functools.lru_cache(maxsize=None)
def patch_grid(k: int) -> PatchGrid:
    if k < 1:
        raise ValueError(f"patch size must be >= 1, got {k}")
    centers = (np.arange(k, dtype=np.float64) + 0.5) / k
    u = np.tile(centers, (k, 1))
    v = u.T.copy()
    u.flags.writeable = False
    v.flags.writeable = False
    return PatchGrid(k, u, v)


@dataclass
class PlaneCoeffMap:
    """Angles and distance per cell, each shaped ``(B, 1, H/k, W/k)``."""

    theta: Tensor
    phi: Tensor
    n4: Tensor
    k: int
    kappa: float


def angles_to_normal(theta, phi):
    """Spherical angles to a unit normal ``(n1, n2, n3)``; works on scalars or arrays."""
    st = np.sin(theta)
    return st * np.cos(phi), st * np.sin(phi), np.cos(theta)


def normal_to_angles(n1, n2, n3):
    """Inverse of :func:`angles_to_normal` for unit normals."""
    return np.arccos(np.clip(n3, -1.0, 1.0)), np.arctan2(n2, n1)


def ray_plane_depth(n, n4, u, v, eps: float = EPS):
    n1, n2, n3 = n
    return n4 / np.maximum(n1 * u + n2 * v + n3, eps)


def expand_planes(theta, phi, n4, k: int, eps: float = EPS) -> np.ndarray:
    """Float64 reference expansion of ``(..., h, w)`` coefficient arrays to ``(..., h*k, w*k)``."""
    theta, phi, n4 = (np.asarray(a, dtype=np.float64) for a in (theta, phi, n4))
    grid = patch_grid(k)
    n1, n2, n3 = angles_to_normal(theta, phi)
    lead = theta.shape[:-2]
    h, w = theta.shape[-2:]

    def cell(a):
        return a[..., :, None, :, None]

    cues = ray_plane_depth(
        (cell(n1), cell(n2), cell(n3)), cell(n4), grid.u[:, None, :], grid.v[:, None, :], eps
    )
    return cues.reshape(*lead, h * k, w * k)


class LpgExpand(Function):
    name = "lpg_expand"

    def forward(self, theta, phi, n4, k: int = 2, eps: float = EPS):
        if not (theta.shape == phi.shape == n4.shape) or theta.ndim != 4 or theta.shape[1] != 1:
            raise ValueError(f"lpg_expand expects matching (B,1,h,w) maps, got {theta.shape}, {phi.shape}, {n4.shape}")
        B, _, h, w = theta.shape
        grid = patch_grid(k)
        U = grid.u[:, None, :]
        V = grid.v[:, None, :]

        # Float64 inside: the denominator cancels for oblique planes, and in
        # float32 that costs up to a few 1e-4 of relative depth accuracy.
        theta, phi, n4 = (np.asarray(a, dtype=np.float64) for a in (theta, phi, n4))
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)

        def cell(a):
            return a[:, :, :, None, :, None]

        n1, n2, n3 = cell(st * cp), cell(st * sp), cell(ct)
        denom = n1 * U + n2 * V + n3
        live = denom >= eps
        denom = np.maximum(denom, eps)
        cues = cell(n4) / denom

        self.saved = (st, ct, sp, cp, U, V, live, denom, cell(n4))
        self.shape6 = cues.shape
        return cues.reshape(B, 1, h * k, w * k)

    def backward(self, g):
        st, ct, sp, cp, U, V, live, denom, n4 = self.saved
        g6 = g.reshape(self.shape6)
        axes = (3, 5)
        g_n4 = (g6 / denom).sum(axis=axes)
        g_den = np.where(live, -g6 * n4 / (denom * denom), 0.0)
        g_n1 = (g_den * U).sum(axis=axes)
        g_n2 = (g_den * V).sum(axis=axes)
        g_n3 = g_den.sum(axis=axes)
        g_theta = g_n1 * ct * cp + g_n2 * ct * sp - g_n3 * st
        g_phi = st * (g_n2 * cp - g_n1 * sp)
        return g_theta, g_phi, g_n4


def lpg_expand(coeffs: PlaneCoeffMap, grid: Optional[PatchGrid] = None) -> Tensor:
    """Full-resolution depth cues ``(B, 1, H, W)`` from a coefficient map."""
    grid = grid or patch_grid(coeffs.k)
    if grid.k != coeffs.k:
        raise ValueError(f"patch grid k={grid.k} does not match coefficient map k={coeffs.k}")
    return LpgExpand.apply(coeffs.theta, coeffs.phi, coeffs.n4, k=coeffs.k)


def reduction_widths(channels: int) -> list[int]:
    """Channel widths of the 1x1 reduction stack, input width first.

    Halve while the result stays >= 3, then finish at exactly 3.
    """
    if channels < 4:
        raise ValueError(f"LPG reduction needs at least 4 input channels, got {channels}")
    widths = [channels]
    while widths[-1] // 2 >= 3:
        widths.append(widths[-1] // 2)
    if widths[-1] != 3:
        widths.append(3)
    return widths


def reduce_to_coeffs(
    features: Tensor,
    weights: Sequence[tuple[Tensor, Tensor]],
    kappa: float,
    k: int,
) -> PlaneCoeffMap:
    """Run the 1x1 reduction stack and split the 3 output channels.

    ELU sits between convs, not after the last one. Channel 0 is theta,
    channel 1 is phi (both raw), channel 2 goes through sigmoid and is scaled
    by ``kappa`` to give ``n4``.
    """
    expected = reduction_widths(features.shape[1])
    if len(weights) != len(expected) - 1:
        raise ValueError(f"expected {len(expected) - 1} reduction layers for widths {expected}, got {len(weights)}")
    x = features
    for idx, (w, b) in enumerate(weights):
        x = ops.conv2d(x, w, b)
        if idx < len(weights) - 1:
            x = ops.elu(x)
    theta = ops.narrow(x, 1, 0, 1)
    phi = ops.narrow(x, 1, 1, 1)
    n4 = ops.mul_scalar(ops.sigmoid(ops.narrow(x, 1, 2, 1)), kappa)
    return PlaneCoeffMap(theta, phi, n4, k, kappa)


@dataclass
class PlaneFit:
    theta: float
    phi: float
    n4: float
    residual: float
    iterations: int


def _rms_residual(patch: np.ndarray, theta: float, phi: float, n4: float, k: int) -> float:
    pred = expand_planes(np.array([[theta]]), np.array([[phi]]), np.array([[n4]]), k)
    return float(np.sqrt(np.mean((pred - patch) ** 2)))


def plane_from_patch(patch: np.ndarray, grid: PatchGrid) -> tuple[float, float, float]:
    """Closed-form plane for a patch: ``1/c`` is affine in ``(u, v)``.

    Least squares on ``1/c = a u + b v + e`` gives the normal direction
    ``(a, b, e)`` and ``n4 = 1 / |(a, b, e)|``.
    """
    A = np.stack([grid.u.ravel(), grid.v.ravel(), np.ones(grid.k * grid.k)], axis=1)
    coef, *_ = np.linalg.lstsq(A, 1.0 / patch.ravel(), rcond=None)
    norm = float(np.linalg.norm(coef))
    n1, n2, n3 = coef / norm
    theta, phi = normal_to_angles(n1, n2, n3)
    return float(theta), float(phi), 1.0 / norm


def _random_start(patch: np.ndarray, grid: PatchGrid, rng: np.random.Generator) -> tuple[float, float, float]:
    """Random angles whose plane keeps every patch denominator >= 0.5, with n4 matching the patch mean."""
    while True:
        theta, phi = rng.uniform(0.0, np.pi / 3), rng.uniform(-np.pi, np.pi)
        n1, n2, n3 = angles_to_normal(theta, phi)
        denom = n1 * grid.u + n2 * grid.v + n3
        if denom.min() >= 0.5:
            return float(theta), float(phi), float(np.mean(patch * denom))


def fit_plane_to_patch(
    patch: np.ndarray,
    grid: PatchGrid,
    iterations: int = 2000,
    lr: float = 0.05,
    init: Union[None, str, tuple[float, float, float]] = None,
    rng: Optional[np.random.Generator] = None,
) -> PlaneFit:
    """Fit (theta, phi, n4) to a k x k patch by gradient descent through lpg_expand.

    ``init`` is an explicit ``(theta, phi, n4)`` triple, ``"lstsq"`` for the
    closed-form start of :func:`plane_from_patch`, or ``None`` for a random
    start. The squared error is taken on the patch divided by its mean so the
    three parameters are on comparable scales. Adam runs with a short
    second-moment memory (beta2 = 0.99) and ``lr`` decays polynomially to zero:
    near-pole normals need large late moves in phi, which the default
    beta2 = 0.999 would damp for thousands of steps. The best iterate is
    returned with its RMS residual evaluated in float64.
    """
    from .optim import AdamState, LrSchedule, adam_step, poly_lr

    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (grid.k, grid.k):
        raise ValueError(f"patch shape {patch.shape} does not match grid k={grid.k}")
    if not np.all(patch > 0):
        raise ValueError("patch entries must be positive")

    if init is None:
        start = _random_start(patch, grid, rng or np.random.default_rng(0))
    elif isinstance(init, str):
        if init != "lstsq":
            raise ValueError(f"unknown init {init!r}")
        start = plane_from_patch(patch, grid)
    else:
        start = tuple(float(x) for x in init)

    best = (*start, _rms_residual(patch, *start, grid.k))
    if iterations <= 0 or best[3] == 0.0:
        return PlaneFit(*best, iterations=0)

    scale = float(patch.mean())
    params = {
        name: Tensor(np.full((1, 1, 1, 1), value), requires_grad=True)
        for name, value in zip(("theta", "phi", "n4"), (start[0], start[1], start[2] / scale))
    }
    target = Tensor((patch / scale)[None, None])
    state = AdamState.for_params(params, beta2=0.99)
    schedule = LrSchedule(base_lr=lr, power=0.9, total_steps=iterations)
    for it in range(iterations):
        for p in params.values():
            p.zero_grad()
        with ComputationRecord() as rec:
            cues = LpgExpand.apply(params["theta"], params["phi"], params["n4"], k=grid.k)
            diff = ops.sub(cues, target)
            loss = ops.mean(ops.mul(diff, diff))
        rec.backward(loss)
        adam_step(params, {n: p.grad for n, p in params.items()}, state, poly_lr(schedule, it))
        # Keep n4 positive; the clamp branch of the expansion assumes it.
        np.maximum(params["n4"].data, DTYPE(1e-6), out=params["n4"].data)
        theta, phi, n4 = (float(params[n].data.item()) for n in ("theta", "phi", "n4"))
        res = _rms_residual(patch, theta, phi, n4 * scale, grid.k)
        if res < best[3]:
            best = (theta, phi, n4 * scale, res)
    return PlaneFit(*best, iterations=iterations)


def _lpg_case(rng: np.random.Generator):
    shape = (2, 1, 2, 2)
    # theta <= 0.6 keeps every denominator above 0.2, far from the clamp.
    theta = Tensor(rng.uniform(0.0, 0.6, size=shape), requires_grad=True)
    phi = Tensor(rng.uniform(-np.pi, np.pi, size=shape), requires_grad=True)
    n4 = Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)
    return (lambda t, p, d: LpgExpand.apply(t, p, d, k=2)), [theta, phi, n4]


register_case("lpg_expand", _lpg_case)
