"""Binary checkpoint container.

Layout, all integers little-endian::

    b"HYSG"  u32 version  u32 n_tensors
    per tensor: u32 name_len, name (UTF-8), u32 rank, u64 dims[rank], f64 data (C order)
    u32 len, config snapshot (UTF-8 JSON)
    u32 len, id remap tables (UTF-8 JSON)

Every tensor is stored as float64, so ``load(save(x))`` reproduces the arrays bit for bit.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"HYSG"
VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    remap: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if list(self.tensors) != list(other.tensors) or self.config != other.config \
                or self.remap != other.remap:
            return False
        return all(self.tensors[k].shape == other.tensors[k].shape
                   and self.tensors[k].tobytes() == other.tensors[k].tobytes() for k in self.tensors)


def _put_blob(out: io.BytesIO, data: bytes) -> None:
    out.write(struct.pack("<I", len(data)))
    out.write(data)


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        _put_blob(out, name.encode("utf-8"))
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(arr.tobytes())
    _put_blob(out, json.dumps(ckpt.config, sort_keys=True).encode("utf-8"))
    _put_blob(out, json.dumps(ckpt.remap, sort_keys=True).encode("utf-8"))
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (reader handles {VERSION})")
    tensors = {}
    for _ in range(count):
        name = r.blob().decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    try:
        config = json.loads(r.blob().decode("utf-8"))
        remap = json.loads(r.blob().decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(tensors, config, remap)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
