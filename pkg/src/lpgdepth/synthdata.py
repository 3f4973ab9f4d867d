"""Synthetic piecewise-planar scenes rendered through a pinhole camera.

Camera frame: x right, y down, z forward. A plane is ``{X : n . X = d}``; a
pixel at integer coordinates ``(x, y)`` casts the ray
``r = ((x - cx) / fx, (y - cy) / fy, 1)`` and meets the plane at z-depth
``d / (n . r)``. The depth map keeps the nearest positive hit that lies inside
the plane's bounds.

Random scenes are drawn from one family: a floor 1.5 units below the camera,
a fronto-parallel far plane at ``0.85 * kappa`` that catches every other ray,
0-2 walls (back, left, right) and 0-3 axis-aligned boxes resting on the floor.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .imageio import read_pfm, read_pgm, write_pfm, write_pgm

log = logging.getLogger(__name__)

CAMERA_HEIGHT = 1.5
FAR_FRACTION = 0.85
_BOUND_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def default(cls, width: int, height: int) -> "CameraIntrinsics":
        """Focal length equal to the image width, principal point at the center."""
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        ys, xs = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return (xs - self.cx) / self.fx, (ys - self.cy) / self.fy


@dataclass(frozen=True)
class Plane:
    normal: tuple[float, float, float]
    offset: float
    # (xmin, xmax, ymin, ymax, zmin, zmax) on the hit point; None is unbounded.
    bounds: Optional[tuple[float, float, float, float, float, float]] = None
    albedo: float = 1.0

    def shading_normal(self) -> np.ndarray:
        """Normal flipped to face the camera at the origin."""
        n = np.asarray(self.normal, dtype=np.float64)
        return -n if self.offset > 0 else n


@dataclass
class SceneSpec:
    planes: list[Plane]
    light: tuple[float, float, float] = (0.3, -0.8, -0.52)
    ambient: float = 0.15
    diffuse: float = 0.8
    seed: Optional[int] = None


def _plane_hits(plane: Plane, rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    """z-depth of every ray's hit with ``plane``; inf where it misses."""
    n1, n2, n3 = plane.normal
    denom = n1 * rx + n2 * ry + n3
    with np.errstate(divide="ignore", invalid="ignore"):
        z = plane.offset / denom
    ok = np.isfinite(z) & (z > 0)
    if plane.bounds is not None:
        x0, x1, y0, y1, z0, z1 = plane.bounds
        X, Y = z * rx, z * ry
        ok &= (X >= x0 - _BOUND_TOL) & (X <= x1 + _BOUND_TOL)
        ok &= (Y >= y0 - _BOUND_TOL) & (Y <= y1 + _BOUND_TOL)
        ok &= (z >= z0 - _BOUND_TOL) & (z <= z1 + _BOUND_TOL)
    return np.where(ok, z, np.inf)


def render_hits(scene: SceneSpec, camera: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit depth (float64) and plane index per pixel."""
    rx, ry = camera.rays()
    depth = np.full(rx.shape, np.inf)
    index = np.full(rx.shape, -1, dtype=np.int64)
    for i, plane in enumerate(scene.planes):
        z = _plane_hits(plane, rx, ry)
        closer = z < depth
        depth[closer] = z[closer]
        index[closer] = i
    if np.any(index < 0):
        raise RuntimeError("scene leaves pixels without a hit; the far plane is missing")
    return depth, index


def render_depth(scene: SceneSpec, camera: CameraIntrinsics) -> np.ndarray:
    return render_hits(scene, camera)[0].astype(np.float32)


def render_image(scene: SceneSpec, camera: CameraIntrinsics) -> np.ndarray:
    """Lambertian shading of the nearest surface, shape ``(1, H, W)`` in [0, 1]."""
    _, index = render_hits(scene, camera)
    light = np.asarray(scene.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = np.array([
        p.albedo * (scene.ambient + scene.diffuse * max(0.0, float(p.shading_normal() @ light)))
        for p in scene.planes
    ])
    return np.clip(shade[index], 0.0, 1.0).astype(np.float32)[None]


def box_planes(x0: float, x1: float, height: float, z0: float, z1: float, albedo: float) -> list[Plane]:
    """Front, top and both side faces of a box standing on the floor."""
    top = CAMERA_HEIGHT - height
    inf = np.inf
    return [
        Plane((0.0, 0.0, 1.0), z0, (x0, x1, top, CAMERA_HEIGHT, -inf, inf), albedo),
        Plane((0.0, 1.0, 0.0), top, (x0, x1, -inf, inf, z0, z1), albedo),
        Plane((1.0, 0.0, 0.0), x0, (-inf, inf, top, CAMERA_HEIGHT, z0, z1), albedo),
        Plane((1.0, 0.0, 0.0), x1, (-inf, inf, top, CAMERA_HEIGHT, z0, z1), albedo),
    ]


def random_scene(rng: np.random.Generator, kappa: float = 10.0, seed: Optional[int] = None) -> SceneSpec:
    far = FAR_FRACTION * kappa
    planes = [
        Plane((0.0, -1.0, 0.0), -CAMERA_HEIGHT, albedo=1.0),
        Plane((0.0, 0.0, 1.0), far, albedo=0.5),
    ]
    n_walls = int(rng.integers(0, 3))
    for kind in rng.permutation(["back", "left", "right"])[:n_walls]:
        if kind == "back":
            planes.append(Plane((0.0, 0.0, 1.0), float(rng.uniform(0.35, 0.8) * kappa), albedo=0.85))
        else:
            offset = float(rng.uniform(1.2, 3.0))
            planes.append(Plane((1.0, 0.0, 0.0), -offset if kind == "left" else offset, albedo=0.85))
    for _ in range(int(rng.integers(0, 4))):
        width, height, depth = rng.uniform(0.4, 1.4), rng.uniform(0.3, 1.4), rng.uniform(0.4, 1.2)
        cx = rng.uniform(-2.0, 2.0)
        z0 = rng.uniform(0.25, 0.7) * kappa
        planes.extend(box_planes(cx - width / 2, cx + width / 2, height, z0, z0 + depth, float(rng.uniform(0.6, 1.0))))
    return SceneSpec(planes, seed=seed)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    kappa: float = 10.0
    gt_dropout: float = 0.0


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32
    mask: np.ndarray  # (H, W) bool


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def make_sample(index: int, cfg: SynthConfig, seed: int) -> tuple[Sample, SceneSpec]:
    rng = sample_rng(seed, index)
    camera = CameraIntrinsics.default(cfg.width, cfg.height)
    scene = random_scene(rng, cfg.kappa, seed=seed)
    depth = render_depth(scene, camera)
    image = render_image(scene, camera)
    mask = rng.random(depth.shape) >= cfg.gt_dropout if cfg.gt_dropout > 0 else np.ones(depth.shape, bool)
    return Sample(image, depth, mask), scene


def quantize_image(image: np.ndarray) -> np.ndarray:
    """16-bit PGM codes for a ``[0, 1]`` image."""
    return np.rint(np.asarray(image, dtype=np.float64) * 65535).astype(np.uint16)


def _write_sample(out: Path, index: int, sample: Sample) -> tuple[str, str, str]:
    names = (f"img_{index:06d}.pgm", f"depth_{index:06d}.pfm", f"mask_{index:06d}.pgm")
    write_pgm(out / names[0], quantize_image(sample.image[0]))
    write_pfm(out / names[1], sample.depth)
    write_pgm(out / names[2], sample.mask.astype(np.uint8) * 255, maxval=255)
    return names


def gen_dataset(n: int, cfg: SynthConfig, seed: int, out_dir: str | os.PathLike) -> Path:
    """Write ``n`` samples plus ``manifest.tsv`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for i in range(n):
            sample, _ = make_sample(i, cfg, seed)
            rows.append((i, *_write_sample(out, i, sample)))
        manifest = out / "manifest.tsv"
        with open(manifest, "w", encoding="utf-8") as f:
            for row in rows:
                f.write("\t".join(str(x) for x in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc.strerror or exc}") from exc
    log.info("wrote %d samples to %s", n, out)
    return manifest


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, H, W)
    depths: np.ndarray  # (N, H, W)
    masks: np.ndarray  # (N, H, W) bool
    paths: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, i: int) -> Sample:
        return Sample(self.images[i], self.depths[i], self.masks[i])


def synth_dataset(n: int, cfg: SynthConfig, seed: int) -> Dataset:
    """In-memory equivalent of ``gen_dataset`` followed by ``load_dataset``."""
    images, depths, masks = [], [], []
    for i in range(n):
        sample, _ = make_sample(i, cfg, seed)
        images.append(_unit_image(quantize_image(sample.image[0]), 65535))
        depths.append(sample.depth)
        masks.append(sample.mask)
    return Dataset(np.stack(images), np.stack(depths), np.stack(masks), [f"img_{i:06d}.pgm" for i in range(n)])


def _unit_image(codes: np.ndarray, maxval: int) -> np.ndarray:
    return (codes.astype(np.float64) / maxval).astype(np.float32)[None]


def load_image(path: str | os.PathLike) -> np.ndarray:
    data, maxval = read_pgm(path)
    return _unit_image(data, maxval)


def load_dataset(data_dir: str | os.PathLike) -> Dataset:
    root = Path(data_dir)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.tsv in {root}")
    images, depths, masks, paths = [], [], [], []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        _, img, depth, mask = line.split("\t")
        images.append(load_image(root / img))
        depths.append(read_pfm(root / depth))
        masks.append(read_pgm(root / mask)[0] > 0)
        paths.append(img)
    if not images:
        raise ValueError(f"manifest {manifest} lists no samples")
    return Dataset(np.stack(images), np.stack(depths), np.stack(masks), paths)


def hflip(sample: Sample) -> Sample:
    return Sample(sample.image[..., ::-1].copy(), sample.depth[..., ::-1].copy(), sample.mask[..., ::-1].copy())


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(image * np.float32(factor), 0.0, 1.0).astype(np.float32)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    mean = np.float32(image.mean())
    return np.clip((image - mean) * np.float32(factor) + mean, 0.0, 1.0).astype(np.float32)


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random horizontal flip (p=0.5) and, with p=0.5, brightness and contrast in [0.9, 1.1].

    Depth and mask only ever move with the flip; photometric changes touch
    the image alone.
    """
    flip = rng.random() < 0.5
    photometric = rng.random() < 0.5
    out = hflip(sample) if flip else sample
    if photometric:
        brightness = rng.uniform(0.9, 1.1)
        contrast = rng.uniform(0.9, 1.1)
        out = replace(out, image=adjust_contrast(adjust_brightness(out.image, brightness), contrast))
    return out


def batch_from(dataset: Dataset, indices: Sequence[int], rng: Optional[np.random.Generator] = None):
    """Stack samples (augmented when ``rng`` is given) into batch arrays."""
    samples = [dataset.sample(i) for i in indices]
    if rng is not None:
        samples = [augment(s, rng) for s in samples]
    images = np.stack([s.image for s in samples])
    depths = np.stack([s.depth for s in samples])[:, None]
    masks = np.stack([s.mask for s in samples])[:, None]
    return images, depths, masks
