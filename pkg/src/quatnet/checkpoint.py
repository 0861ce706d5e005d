"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic    8 bytes   b"QNETCKPT"
    version  u16
    dtype    u8        model float dtype tag (see DTYPE_TAGS)
    meta     u32 length + UTF-8 JSON (config, epoch, metrics history, ...)
    count    u32
    count x tensor:
        name   u16 length + UTF-8
        dtype  u8 tag
        ndim   u8, then ndim x u64 dims
        data   u64 byte length + raw C-order bytes

Tensor names are prefixed ``param/``, ``buffer/`` or ``optim/``.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"QNETCKPT"
VERSION = 1
DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_TAG_OF = {v: k for k, v in DTYPE_TAGS.items()}


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    dtype: np.dtype = np.dtype("<f4")

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def _tag(dtype) -> int:
    dt = np.dtype(dtype)
    if dt.byteorder == ">":
        dt = dt.newbyteorder("<")
    if dt not in _TAG_OF:
        raise CheckpointError(f"unsupported tensor dtype {dtype}")
    return _TAG_OF[dt]


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HB", VERSION, _tag(ckpt.dtype)))
    meta = json.dumps(ckpt.meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        tag = _tag(arr.dtype)
        data = np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag]).tobytes()
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<BB", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<Q", len(data)))
        buf.write(data)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated at byte {self.pos} (wanted {n} more bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(data, source)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a quatnet checkpoint (bad magic)")
    version, dtag = r.unpack("<HB")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    if dtag not in DTYPE_TAGS:
        raise CheckpointError(f"{source}: unknown dtype tag {dtag}")
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (klen,) = r.unpack("<H")
        name = r.take(klen).decode()
        tag, ndim = r.unpack("<BB")
        if tag not in DTYPE_TAGS:
            raise CheckpointError(f"{source}: tensor {name!r} has unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        dt = DTYPE_TAGS[tag]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CheckpointError(f"{source}: tensor {name!r} byte length {nbytes} does not match shape {shape}")
        tensors[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(meta, tensors, DTYPE_TAGS[dtag])


def save(path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    return loads(path.read_bytes(), str(path))


def capture(model, optimizer=None, meta: dict | None = None) -> Checkpoint:
    """Snapshot model tensors and optimizer velocity."""
    tensors = {f"param/{k}": p.data.copy() for k, p in model.named_parameters()}
    tensors.update({f"buffer/{k}": np.array(b) for k, b in model.named_buffers()})
    meta = dict(meta or {})
    if optimizer is not None:
        for i, v in enumerate(optimizer.state.velocity):
            tensors[f"optim/velocity/{i}"] = v.copy()
        meta["optimizer"] = {
            "lr": optimizer.state.lr,
            "momentum": optimizer.state.momentum,
            "clip_norm": optimizer.state.clip_norm,
            "steps": optimizer.state.steps,
        }
    return Checkpoint(meta, tensors, np.dtype(getattr(model, "dtype", np.float32)))


def restore(model, ckpt: Checkpoint, optimizer=None):
    """Load a snapshot into ``model`` (and ``optimizer``); names and shapes must match exactly."""
    params = dict(model.named_parameters())
    stored = ckpt.group("param")
    if set(params) != set(stored):
        missing, extra = sorted(set(params) - set(stored)), sorted(set(stored) - set(params))
        raise CheckpointError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for k, p in params.items():
        if p.shape != stored[k].shape:
            raise CheckpointError(f"parameter {k}: shape {stored[k].shape} in checkpoint, model has {p.shape}")
        p.data[...] = stored[k]
    for k, v in ckpt.group("buffer").items():
        model.set_buffer(k, v)
    if optimizer is not None:
        vel = ckpt.group("optim/velocity")
        if len(vel) != len(optimizer.state.velocity):
            raise CheckpointError(f"optimizer state has {len(vel)} velocities, expected {len(optimizer.state.velocity)}")
        optimizer.state.velocity = [vel[str(i)].astype(p.data.dtype) for i, p in enumerate(optimizer.params)]
        st = ckpt.meta.get("optimizer", {})
        optimizer.state.steps = int(st.get("steps", 0))
