"""Portable binary tensor file format.

Layout, all little-endian:

    magic   4 bytes  b"FUSS"
    version u32      currently 1
    dtype   u32      0 = float32, 1 = int32
    rank    u32
    dims    rank x u64
    payload row-major, little-endian

Files round-trip byte-exactly: reading then rewriting produces identical bytes.
Float tensors are stored as float32 even though the simulator computes in
float64, so writing is lossy while reading is exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"FUSS"
FORMAT_VERSION = 1

DTYPE_FLOAT32 = 0
DTYPE_INT32 = 1

_DTYPES = {
    DTYPE_FLOAT32: np.dtype("<f4"),
    DTYPE_INT32: np.dtype("<i4"),
}


def write_tensor(path, array: np.ndarray, dtype_code: int = DTYPE_FLOAT32) -> None:
    """Write an array to ``path`` in the portable tensor format."""
    if dtype_code not in _DTYPES:
        raise DataError(f"unknown dtype code {dtype_code}")
    arr = np.ascontiguousarray(array).astype(_DTYPES[dtype_code])
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, dtype_code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a portable tensor file back into a numpy array.

    Returns float32 or int32 arrays exactly as stored.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a portable tensor file")
    version, dtype_code, rank = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if dtype_code not in _DTYPES:
        raise DataError(f"{path}: unknown dtype code {dtype_code}")
    offset = 16
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    dtype = _DTYPES[dtype_code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise DataError(f"{path}: payload size mismatch ({len(blob)} != {expected})")
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy()
