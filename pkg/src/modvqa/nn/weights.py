"""Binary weight-file serialization (.mvqw).

Layout, all integers little-endian:

    magic   4 bytes  b"MVQW"
    u32     version (1)
    u32     tensor count
    table, per tensor:
        u16  name length, then UTF-8 name
        u8   dtype (0 = float32)
        u8   rank
        u32  dims[rank]
        u64  payload offset (bytes from the start of the payload section)
    payload: little-endian float32 data, tensors in table order

The payload section begins immediately after the table.  This layout is
the interchange contract with external weight exporters, so it must not
change without bumping the version.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from ..errors import DataError

__all__ = ["save_weights", "read_weight_file", "load_weights"]

MAGIC = b"MVQW"
VERSION = 1
DTYPE_F32 = 0


def save_weights(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays as a .mvqw file (cast to float32)."""
    table = bytearray()
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise DataError(f"tensor name too long: {name[:40]}...")
        table += struct.pack("<H", len(encoded)) + encoded
        table += struct.pack("<BB", DTYPE_F32, arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", len(payload))
        payload += arr.tobytes()
    header = MAGIC + struct.pack("<II", VERSION, len(tensors))
    Path(path).write_bytes(bytes(header) + bytes(table) + bytes(payload))


def read_weight_file(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a .mvqw file into name -> float32 array."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    pos = 12
    entries: list[tuple[str, tuple[int, ...], int]] = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if dtype != DTYPE_F32:
            raise DataError(f"{path}: tensor {name} has unsupported dtype {dtype}")
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, dims, offset))
    payload_start = pos
    payload_size = len(blob) - payload_start
    spans = []
    out: dict[str, np.ndarray] = {}
    for name, dims, offset in entries:
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        if offset + nbytes > payload_size:
            raise DataError(f"{path}: tensor {name} overruns the payload")
        spans.append((offset, offset + nbytes, name))
        raw = blob[payload_start + offset : payload_start + offset + nbytes]
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    spans.sort()
    for (s1, e1, n1), (s2, e2, n2) in zip(spans, spans[1:]):
        if s2 < e1:
            raise DataError(f"{path}: tensors {n1} and {n2} overlap in the payload")
    return out


def load_weights(source: str | Path | dict[str, np.ndarray], model) -> None:
    """Set every model parameter from the file, bit-exactly.

    Every parameter name must be present with a matching shape; tensors
    in the file that the model does not use are accepted with a warning.
    """
    tensors = source if isinstance(source, dict) else read_weight_file(source)
    params = model.named_parameters()
    missing = [name for name in params if name not in tensors]
    if missing:
        raise DataError(f"weight file is missing tensors: {', '.join(sorted(missing))}")
    for name, p in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise DataError(
                f"shape mismatch for {name}: file {arr.shape}, model {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
        p.grad = None
    extra = sorted(set(tensors) - set(params))
    if extra:
        warnings.warn(f"weight file has unused tensors: {', '.join(extra)}")
