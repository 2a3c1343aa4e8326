"""Flat binary tensor files.

Layout, all little-endian: magic ``DPCT``, format version u16 (currently
1), rank u16, one u32 per dim, then float32 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, ShapeError

MAGIC = b"DPCT"
VERSION = 1
_MAX_RANK = 4


def save_tensor(path, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4")
    # ascontiguousarray would promote rank 0 to rank 1
    if arr.ndim > 0:
        arr = np.ascontiguousarray(arr)
    if arr.ndim > _MAX_RANK:
        raise ShapeError(f"tensor files hold rank 0..{_MAX_RANK}, got shape {arr.shape}")
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"tensor file missing: {path}") from exc
    if len(blob) < 8:
        raise DataError(f"tensor file truncated (header): {path}")
    if blob[:4] != MAGIC:
        raise DataError(f"bad magic in tensor file: {path}")
    version, rank = struct.unpack("<HH", blob[4:8])
    if version != VERSION:
        raise DataError(f"unsupported tensor file version {version}: {path}")
    if rank > _MAX_RANK:
        raise DataError(f"tensor file rank {rank} exceeds {_MAX_RANK}: {path}")
    dims_end = 8 + 4 * rank
    if len(blob) < dims_end:
        raise DataError(f"tensor file truncated (dims): {path}")
    dims = struct.unpack(f"<{rank}I", blob[8:dims_end])
    if any(d < 1 for d in dims):
        raise DataError(f"tensor file has zero-sized dim {dims}: {path}")
    expected = dims_end + 4 * int(np.prod(dims, dtype=np.int64))
    if len(blob) != expected:
        raise DataError(
            f"tensor file size {len(blob)} does not match header ({expected} bytes): {path}"
        )
    data = np.frombuffer(blob[dims_end:], dtype="<f4").reshape(dims)
    return data.astype(np.float32, copy=True)
