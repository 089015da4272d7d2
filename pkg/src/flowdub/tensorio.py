"""FDT1 tensor container.

Layout: magic bytes ``FDT1``, u32 little-endian ndim, ndim u32 dims, one
dtype byte (0x08 = float64, 0x04 = float32), then row-major IEEE-754
payload. The in-memory side is always float64; float32 is a lossy export
option.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, NonFiniteError

MAGIC = b"FDT1"

_DTYPE_BYTES = {"f64": 0x08, "f32": 0x04}
_BYTE_DTYPES = {0x08: np.dtype("<f8"), 0x04: np.dtype("<f4")}


def save_tensor(path, array, dtype: str = "f64") -> None:
    """Write an array (1-D or higher) to an FDT1 file.

    dtype "f32" downcasts the payload; the array itself must be finite.
    """
    if dtype not in _DTYPE_BYTES:
        raise ConfigError(f"unknown FDT1 dtype {dtype!r}, expected f64 or f32")
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"refusing to serialize non-finite tensor to {path}")
    payload = arr.astype(_BYTE_DTYPES[_DTYPE_BYTES[dtype]]).tobytes(order="C")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<B", _DTYPE_BYTES[dtype])
    Path(path).write_bytes(header + payload)


def load_tensor(path) -> np.ndarray:
    """Read an FDT1 file back as float64 (float32 payloads upcast)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not an FDT1 tensor (bad magic)")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    if ndim < 1 or ndim > 8:
        raise ConfigError(f"{path}: implausible ndim {ndim}")
    offset = 8
    if len(raw) < offset + 4 * ndim + 1:
        raise ConfigError(f"{path}: truncated FDT1 header")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    dtype_byte = raw[offset]
    offset += 1
    if dtype_byte not in _BYTE_DTYPES:
        raise ConfigError(f"{path}: unknown dtype byte 0x{dtype_byte:02x}")
    dt = _BYTE_DTYPES[dtype_byte]
    count = int(np.prod(dims, dtype=np.int64)) if dims else 0
    expected = offset + count * dt.itemsize
    if len(raw) != expected:
        raise ConfigError(
            f"{path}: payload size {len(raw) - offset} does not match "
            f"dims {dims} ({count * dt.itemsize} bytes expected)"
        )
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    arr = arr.reshape(dims).astype(np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{path}: tensor contains NaN or Inf")
    return arr
