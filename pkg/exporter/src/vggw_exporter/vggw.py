"""Standalone VGGW container writer.

This re-implements the byte layout from scratch so the exporter stays
independent of the synthesis engine; the two sides meet only on the wire
format. Layout, version 1, little-endian:

    0..3   magic b"VGGW"
    4..5   u16 version = 1
    6..7   u16 record count
    8      u8 channel order (0 = RGB)
    9..15  reserved, zero
    16..27 3 x f32 channel means
    per record: u16 name length + UTF-8 name; u32 C_out, C_in, kH, kW;
                kernel f32 [out][in][kh][kw] row-major; bias f32 (C_out)
    last 4 bytes: CRC-32 (IEEE) of everything before them
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"VGGW"
VERSION = 1
CHANNEL_ORDER_RGB = 0


def pack_vggw(
    records: Sequence[tuple[str, np.ndarray, np.ndarray]],
    means: Sequence[float],
) -> bytes:
    """Serialize (name, kernel, bias) records and channel means to bytes."""
    chunks = [
        struct.pack("<4sHHB7s", MAGIC, VERSION, len(records), CHANNEL_ORDER_RGB, b"\x00" * 7),
        np.asarray(means, dtype="<f4").tobytes(),
    ]
    for name, kernel, bias in records:
        if kernel.ndim != 4:
            raise ValueError(f"{name}: kernel must be rank 4, got shape {kernel.shape}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<4I", *kernel.shape))
        chunks.append(np.ascontiguousarray(kernel, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(bias, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def write_atomic(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def record_checksum(kernel: np.ndarray, bias: np.ndarray) -> int:
    """CRC-32 over the serialized f32 kernel and bias values."""
    crc = zlib.crc32(np.ascontiguousarray(kernel, dtype="<f4").tobytes())
    return zlib.crc32(np.ascontiguousarray(bias, dtype="<f4").tobytes(), crc) & 0xFFFFFFFF
