"""Binary container for named tensors (checkpoints, dataset dumps, transforms).

Layout, all little-endian:
    magic   8 bytes  b"TENSRBIN"
    version u32      currently 1
    count   u64      number of records
    record  repeated:
        name_len u32, name utf-8 bytes,
        rank u32, extents rank * u64,
        payload float32 * prod(extents), row-major
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .errors import DataError

MAGIC = b"TENSRBIN"
VERSION = 1


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to `path`. Payloads are stored as float32."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.tobytes())


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a container written by `save_tensors`. Returns float32 arrays."""
    with open(path, "rb") as f:
        raw = f.read()
    return dict(_iter_records(raw, path))


def _iter_records(raw: bytes, path: str) -> Iterator[tuple[str, np.ndarray]]:
    if len(raw) < len(MAGIC) + 12:
        raise DataError(f"{path}: truncated tensor container")
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    off = len(MAGIC) + 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            extents = struct.unpack_from(f"<{rank}Q", raw, off)
            off += 8 * rank
            n = int(np.prod(extents, dtype=np.int64)) if rank else 1
            payload = np.frombuffer(raw, dtype="<f4", count=n, offset=off)
            off += 4 * n
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: truncated or corrupt record") from exc
        if payload.size != n:
            raise DataError(f"{path}: truncated payload for tensor '{name}'")
        yield name, payload.reshape(extents).copy()
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after last record")
