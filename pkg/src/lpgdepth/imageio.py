"""Binary PGM (P5) and grayscale PFM (Pf) readers and writers."""

from __future__ import annotations

import os
import re

import numpy as np

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    for _ in range(count):
        m = _HEADER_TOKEN.match(buf, pos)
        if m is None:
            raise ValueError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos + 1  # single whitespace byte ends the header


def write_pgm(path: str | os.PathLike, image: np.ndarray, maxval: int = 65535) -> None:
    """Write an integer H x W array as binary PGM; 16-bit samples are big-endian."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got shape {image.shape}")
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    if image.size and (image.min() < 0 or image.max() > maxval):
        raise ValueError(f"PGM samples must lie in [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(np.ascontiguousarray(image, dtype=dtype).tobytes())


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Return ``(samples, maxval)`` with samples as a uint16 / uint8 array."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, start = _read_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    need = w * h * dtype.itemsize
    if len(buf) - start < need:
        raise ValueError(f"{path}: truncated PGM data")
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=start).reshape(h, w)
    return data.astype(dtype.newbyteorder("=")), maxval


def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Grayscale little-endian PFM; rows are stored bottom-to-top."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError(f"PFM image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(image[::-1], dtype="<f4").tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    tokens, start = _read_tokens(buf, 4)
    if tokens[0] == b"PF":
        channels = 3
    elif tokens[0] == b"Pf":
        channels = 1
    else:
        raise ValueError(f"{path}: not a PFM file (magic {tokens[0]!r})")
    w, h = int(tokens[1]), int(tokens[2])
    scale = float(tokens[3])
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    count = w * h * channels
    if len(buf) - start < count * 4:
        raise ValueError(f"{path}: truncated PFM data")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def to_unit_pgm(values: np.ndarray, low: float, high: float, maxval: int = 65535) -> np.ndarray:
    """Map ``[low, high]`` linearly onto ``[0, maxval]`` integers (clipped)."""
    span = high - low
    if span <= 0:
        scaled = np.zeros_like(values, dtype=np.float64)
    else:
        scaled = (np.asarray(values, dtype=np.float64) - low) / span
    return np.rint(np.clip(scaled, 0.0, 1.0) * maxval).astype(np.uint16 if maxval > 255 else np.uint8)
