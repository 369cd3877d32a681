"""DKT1 tensor container: a minimal binary format for golden files and
checkpoint entries.

Layout (all integers little-endian):
    magic   4 bytes  b"DKT1"
    rank    u32
    extent  u32 * rank
    data    float32  * prod(extent), row-major

Only float32 payloads are defined; float64 tensors must be cast explicitly
before writing so precision loss is never silent.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["write_tensor", "read_tensor", "pack_tensor", "unpack_tensor", "FormatError"]

MAGIC = b"DKT1"


class FormatError(ValueError):
    """Malformed or unsupported container bytes."""


def pack_tensor(t: Tensor) -> bytes:
    if t.dtype is not np.float32:
        raise FormatError("DKT1 stores float32; cast verification tensors first")
    if t.ndim == 0:
        raise ShapeError("DKT1 needs rank >= 1")
    header = MAGIC + struct.pack("<I", t.ndim)
    header += struct.pack(f"<{t.ndim}I", *t.shape)
    return header + t.data.astype("<f4", copy=False).tobytes()


def unpack_tensor(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor starting at `offset`; returns (tensor, next offset)."""
    if buf[offset : offset + 4] != MAGIC:
        raise FormatError(f"bad magic at offset {offset}: {buf[offset:offset + 4]!r}")
    offset += 4
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if rank == 0 or rank > 8:
        raise FormatError(f"implausible rank {rank}")
    extents = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = 1
    for e in extents:
        if e == 0:
            raise FormatError("zero extent")
        count *= e
    nbytes = 4 * count
    if offset + nbytes > len(buf):
        raise FormatError("truncated payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(extents)
    return Tensor(data.astype(np.float32)), offset + nbytes


def write_tensor(path, t: Tensor) -> None:
    Path(path).write_bytes(pack_tensor(t))


def read_tensor(path) -> Tensor:
    buf = Path(path).read_bytes()
    t, end = unpack_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor payload")
    return t
