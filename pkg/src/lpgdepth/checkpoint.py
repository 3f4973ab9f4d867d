"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LPGD"  version:u32
    section:  count:u32, then per tensor
              name_len:u16, name (UTF-8), rank:u8, extents:u32 * rank, float32 data
    model section, optimizer section, step:u64

The model section holds the parameters plus ``config.*`` entries describing
the architecture, so a checkpoint can be rebuilt without the run config. The
optimizer section holds ``m.<param>`` and ``v.<param>`` moment tensors.
"""

from __future__ import annotations

import os
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .network import VARIANTS, DepthNet, ModelConfig
from .optim import AdamState
from .core.tensor import Tensor

MAGIC = b"LPGD"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: "OrderedDict[str, np.ndarray]"
    optimizer: "OrderedDict[str, np.ndarray]"
    step: int


def _encode_section(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        array = np.asarray(array)
        if array.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} has too many dimensions")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def encode(ckpt: Checkpoint) -> bytes:
    return b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            _encode_section(ckpt.tensors),
            _encode_section(ckpt.optimizer),
            struct.pack("<Q", ckpt.step),
        ]
    )


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def section(self) -> "OrderedDict[str, np.ndarray]":
        (count,) = self.unpack("<I")
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            (name_len,) = self.unpack("<H")
            try:
                name = self.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointError(f"tensor name is not UTF-8 at offset {self.pos}") from exc
            (rank,) = self.unpack("<B")
            shape = self.unpack(f"<{rank}I")
            count_el = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(self.take(4 * count_el), dtype="<f4").reshape(shape)
            out[name] = data.astype(np.float32)
        return out


def decode(buf: bytes) -> Checkpoint:
    reader = _Reader(buf)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    tensors = reader.section()
    optimizer = reader.section()
    (step,) = reader.unpack("<Q")
    if reader.pos != len(buf):
        raise CheckpointError(f"{len(buf) - reader.pos} trailing bytes after checkpoint")
    return Checkpoint(tensors, optimizer, step)


def save(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    data = encode(ckpt)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        return decode(f.read())


# --- model <-> checkpoint ---------------------------------------------------


def config_tensors(cfg: ModelConfig) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict(
        [
            ("config.input_channels", np.float32(cfg.input_channels)),
            ("config.base_width", np.float32(cfg.base_width)),
            ("config.aspp_rates", np.asarray(cfg.aspp_rates, dtype=np.float32)),
            ("config.kappa", np.float32(cfg.kappa)),
            ("config.input_size", np.asarray(cfg.input_size, dtype=np.float32)),
            ("config.seed", np.float32(cfg.seed)),
            ("config.variant", np.float32(VARIANTS.index(cfg.variant))),
        ]
    )


def model_config_from(tensors: Mapping[str, np.ndarray]) -> ModelConfig:
    try:
        return ModelConfig(
            input_channels=int(tensors["config.input_channels"]),
            base_width=int(tensors["config.base_width"]),
            aspp_rates=tuple(int(r) for r in tensors["config.aspp_rates"]),
            kappa=float(tensors["config.kappa"]),
            input_size=tuple(int(s) for s in tensors["config.input_size"]),
            seed=int(tensors["config.seed"]),
            variant=VARIANTS[int(tensors["config.variant"])],
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks model config entry {exc.args[0]!r}") from None


def from_model(model: DepthNet, state: Optional[AdamState], step: int) -> Checkpoint:
    tensors = config_tensors(model.cfg)
    for name, p in model.params.items():
        tensors[name] = p.data
    optimizer: "OrderedDict[str, np.ndarray]" = OrderedDict()
    if state is not None:
        for name in model.params:
            optimizer[f"m.{name}"] = state.m[name]
        for name in model.params:
            optimizer[f"v.{name}"] = state.v[name]
    return Checkpoint(tensors, optimizer, step)


def to_model(ckpt: Checkpoint) -> tuple[DepthNet, Optional[AdamState]]:
    """Rebuild the network (and Adam state if present) from a checkpoint."""
    cfg = model_config_from(ckpt.tensors)
    params = OrderedDict(
        (name, Tensor(array.copy(), requires_grad=True, name=name))
        for name, array in ckpt.tensors.items()
        if not name.startswith("config.")
    )
    try:
        model = DepthNet(cfg, params)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    extra = set(params) - set(model.shapes)
    if extra:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(extra)[:5]}")
    state = None
    if ckpt.optimizer:
        state = AdamState.for_params(model.params)
        for name in model.params:
            for moment, store in (("m", state.m), ("v", state.v)):
                key = f"{moment}.{name}"
                if key not in ckpt.optimizer:
                    raise CheckpointError(f"optimizer state lacks {key!r}")
                store[name] = ckpt.optimizer[key].copy()
        state.t = ckpt.step
    return model, state
