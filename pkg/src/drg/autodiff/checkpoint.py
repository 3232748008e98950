"""Bit-exact binary container for named float arrays.

Layout (little-endian):
    magic "DRGCKPT1" (8 bytes) | version u32 | entry count u32
    per entry: name length u16 | UTF-8 name | dtype u8 (0=f32, 1=f64)
               | rank u8 | dims u32 each | raw row-major data
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from ..errors import CheckpointLoadError, UsageError

MAGIC = b"DRGCKPT1"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path, arrays: Dict[str, np.ndarray]) -> None:
    """Write arrays in iteration order; only f32/f64 payloads are allowed."""
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise UsageError(f"checkpoint entry '{name}' has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise UsageError(f"checkpoint entry name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    """Read a container back into an ordered name -> array map."""
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:8] != MAGIC:
        raise CheckpointLoadError(f"{path}: not a DRGCKPT1 container")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointLoadError(f"{path}: unsupported version {version}")
    off = 16
    out: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            code, rank = struct.unpack_from("<BB", buf, off)
            off += 2
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise CheckpointLoadError(f"{path}: entry '{name}' has unknown dtype code {code}")
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
            end = off + nbytes
            if end > len(buf):
                raise CheckpointLoadError(f"{path}: truncated data for entry '{name}'")
            arr = np.frombuffer(buf[off:end], dtype=dtype).reshape(dims)
            out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
            off = end
    except struct.error as e:
        raise CheckpointLoadError(f"{path}: truncated container ({e})") from None
    if off != len(buf):
        raise CheckpointLoadError(f"{path}: {len(buf) - off} trailing bytes")
    return out
