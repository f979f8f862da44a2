"""Reader/writer for the VGGW convolution-weight container.

Byte layout, version 1, little-endian throughout:

    offset 0   magic b"VGGW"
    offset 4   u16 version (= 1)
    offset 6   u16 record count
    offset 8   u8 channel order (0 = RGB; the only defined value)
    offset 9   7 reserved bytes, zero
    offset 16  3 x f32 preprocessing channel means
    then, per record:
        u16 name length, UTF-8 name
        u32 C_out, C_in, kH, kW
        kernel: C_out*C_in*kH*kW f32, [out][in][kh][kw] row-major
        bias:   C_out f32
    trailing 4 bytes: CRC-32 (IEEE) of everything before them

All floats are stored at 32-bit precision; loading can widen to float64
for verification builds. Loading never returns a partially parsed set:
any structural problem raises before a WeightSet is constructed.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    WeightChecksumError,
    WeightFileError,
    WeightFormatError,
    WeightValidationError,
)

MAGIC = b"VGGW"
VERSION = 1
CHANNEL_ORDER_RGB = 0
_HEADER = struct.Struct("<4sHHB7s")


@dataclass(frozen=True)
class ConvRecord:
    name: str
    kernel: np.ndarray  # (C_out, C_in, kH, kW)
    bias: np.ndarray    # (C_out,)


@dataclass(frozen=True)
class WeightSet:
    records: tuple[ConvRecord, ...]
    means: np.ndarray  # length-3 per-channel preprocessing means, RGB order
    version: int = VERSION

    def __post_init__(self):
        if self.means.shape != (3,):
            raise WeightValidationError(f"means must have length 3, got {self.means.shape}")
        previous_out = 3
        for record in self.records:
            if record.kernel.ndim != 4:
                raise WeightValidationError(f"record {record.name}: kernel is not rank 4")
            c_out, c_in, kh, kw = record.kernel.shape
            if (kh, kw) != (3, 3):
                raise WeightValidationError(
                    f"record {record.name}: kernel spatial size {kh}x{kw}, expected 3x3"
                )
            if record.bias.shape != (c_out,):
                raise WeightValidationError(
                    f"record {record.name}: bias length {record.bias.shape} != C_out {c_out}"
                )
            if c_in != previous_out:
                raise WeightValidationError(
                    f"record {record.name}: C_in {c_in} does not chain from previous C_out {previous_out}"
                )
            previous_out = c_out

    def find(self, name: str) -> ConvRecord | None:
        for record in self.records:
            if record.name == name:
                return record
        return None

    def astype(self, dtype) -> "WeightSet":
        return WeightSet(
            records=tuple(
                ConvRecord(r.name, r.kernel.astype(dtype), r.bias.astype(dtype))
                for r in self.records
            ),
            means=self.means.astype(np.float64),
            version=self.version,
        )


def write_weights(ws: WeightSet, path: str | Path) -> None:
    """Serialize a WeightSet; the file appears atomically."""
    chunks = [
        _HEADER.pack(MAGIC, VERSION, len(ws.records), CHANNEL_ORDER_RGB, b"\x00" * 7),
        np.asarray(ws.means, dtype="<f4").tobytes(),
    ]
    for record in ws.records:
        name = record.name.encode("utf-8")
        c_out, c_in, kh, kw = record.kernel.shape
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<4I", c_out, c_in, kh, kw))
        chunks.append(np.ascontiguousarray(record.kernel, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(record.bias, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    payload += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)

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


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(
                f"file truncated: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(path: str | Path, dtype=np.float32) -> WeightSet:
    """Parse and checksum-verify a VGGW file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc

    cursor = _Cursor(data)
    magic, version, count, order, reserved = _HEADER.unpack(cursor.take(_HEADER.size))
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    if order != CHANNEL_ORDER_RGB:
        raise WeightFormatError(f"unknown channel-order flag {order}")
    if reserved != b"\x00" * 7:
        raise WeightFormatError("reserved header bytes are not zero")

    means = np.frombuffer(cursor.take(12), dtype="<f4").astype(np.float64)

    records = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", cursor.take(2))
        try:
            name = cursor.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"record name is not valid UTF-8: {exc}") from exc
        c_out, c_in, kh, kw = struct.unpack("<4I", cursor.take(16))
        n_kernel = c_out * c_in * kh * kw
        kernel = np.frombuffer(cursor.take(4 * n_kernel), dtype="<f4")
        bias = np.frombuffer(cursor.take(4 * c_out), dtype="<f4")
        records.append(
            ConvRecord(
                name=name,
                kernel=kernel.astype(dtype).reshape(c_out, c_in, kh, kw),
                bias=bias.astype(dtype),
            )
        )

    (stored_crc,) = struct.unpack("<I", cursor.take(4))
    if cursor.pos != len(data):
        raise WeightFormatError(f"{len(data) - cursor.pos} trailing bytes after checksum")
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise WeightChecksumError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    if not all(np.all(np.isfinite(r.kernel)) and np.all(np.isfinite(r.bias)) for r in records):
        raise WeightValidationError("weight records contain non-finite values")

    return WeightSet(records=tuple(records), means=means, version=version)


def validate_against(ws: WeightSet, expected: Sequence[tuple[str, int, int]]) -> None:
    """Check record names, count and shapes against an expected conv chain.

    expected rows are (name, C_out, C_in); raises WeightValidationError
    naming the first offending record.
    """
    for i, (name, c_out, c_in) in enumerate(expected):
        if i >= len(ws.records):
            raise WeightValidationError(f"missing record {name}")
        record = ws.records[i]
        if record.name != name:
            raise WeightValidationError(
                f"record {i} is {record.name!r}, expected {name!r}"
            )
        if record.kernel.shape != (c_out, c_in, 3, 3):
            raise WeightValidationError(
                f"record {name} has kernel shape {record.kernel.shape}, "
                f"expected {(c_out, c_in, 3, 3)}"
            )
    if len(ws.records) > len(expected):
        raise WeightValidationError(
            f"unexpected extra record {ws.records[len(expected)].name}"
        )
