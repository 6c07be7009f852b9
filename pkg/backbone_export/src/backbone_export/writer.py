"""Standalone writer for the .mvqw weight-file format.

Implements the interchange layout from scratch (this package must not
depend on the consuming engine), all integers little-endian:

    magic   4 bytes  b"MVQW"
    u32     version (1)
    u32     tensor count
    table, per tensor:
        u16  name length, then UTF-8 name
        u8   dtype (0 = float32)
        u8   rank
        u32  dims[rank]
        u64  offset into the payload section
    payload: float32 data, tensors in table order

The payload section starts immediately after the table.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVQW"
VERSION = 1
DTYPE_F32 = 0


class ExportError(RuntimeError):
    pass


def write_weight_file(path: str | Path, tensors: dict[str, np.ndarray]) -> str:
    """Write named float32 arrays; returns the payload's sha256 hex digest."""
    table = bytearray()
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ExportError(f"tensor name too long: {name[:40]}...")
        table += struct.pack("<H", len(encoded)) + encoded
        table += struct.pack("<BB", DTYPE_F32, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", len(payload))
        payload += arr.tobytes()
    header = MAGIC + struct.pack("<II", VERSION, len(tensors))
    Path(path).write_bytes(bytes(header) + bytes(table) + bytes(payload))
    return hashlib.sha256(bytes(payload)).hexdigest()
