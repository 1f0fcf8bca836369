"""PMDL checkpoint files.

Layout (little-endian)::

    b"PMDL" | version u8 | entry count u32
    per entry: name length u32 | utf-8 name | rank u32 | extents u32 * rank | float32 payload
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PMDL"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(entries: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic: not a PMDL checkpoint")
    if len(view) < 9:
        raise CheckpointError("truncated header")
    if view[4] != VERSION:
        raise CheckpointError(f"unsupported PMDL version {view[4]}")
    (count,) = struct.unpack_from("<I", view, 5)
    pos = 9
    out: dict[str, np.ndarray] = {}

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated payload")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save(path, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(entries))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
