"""Binary feature files and the table-of-contents model container.

Matrix file layout (little-endian):
    magic "FMTX" (4 bytes) | version uint32 | rows uint64 | cols uint64
    followed by rows*cols IEEE-754 float64 values, row-major.
The header is exactly 24 bytes, so a file holds 24 + rows*cols*8 bytes.

Container layout: a table of contents (count uint32, then per entry
name length uint32, name bytes utf-8, absolute offset uint64) followed by
one matrix blob per entry at its recorded offset.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"FMTX"
VERSION = 1

_HEADER = struct.Struct("<4sIQQ")
HEADER_SIZE = _HEADER.size  # 24 bytes


def matrix_file_size(rows: int, cols: int) -> int:
    """Exact size in bytes of a matrix file with the given shape."""
    return HEADER_SIZE + rows * cols * 8


def pack_matrix(x: np.ndarray) -> bytes:
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.ndim != 2:
        raise DataFormatError(f"only 2-d matrices can be packed, got ndim={x.ndim}")
    header = _HEADER.pack(MAGIC, VERSION, x.shape[0], x.shape[1])
    return header + x.astype("<f8").tobytes(order="C")


def unpack_matrix(buf: bytes, offset: int = 0) -> np.ndarray:
    """Decode one matrix blob; validates magic, version and payload length."""
    if len(buf) - offset < HEADER_SIZE:
        raise DataFormatError("truncated file: header incomplete")
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}, expected {VERSION}")
    need = rows * cols * 8
    payload = buf[offset + HEADER_SIZE:offset + HEADER_SIZE + need]
    if len(payload) < need:
        raise DataFormatError(
            f"truncated payload: expected {need} bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return data.reshape(rows, cols)


def write_matrix(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_bytes(pack_matrix(x))


def read_matrix(path: str | Path,
                expected_rows: int | None = None,
                expected_cols: int | None = None) -> np.ndarray:
    x = unpack_matrix(Path(path).read_bytes())
    if expected_rows is not None and x.shape[0] != expected_rows:
        raise DataFormatError(
            f"dimension mismatch: {path} has {x.shape[0]} rows, expected {expected_rows}"
        )
    if expected_cols is not None and x.shape[1] != expected_cols:
        raise DataFormatError(
            f"dimension mismatch: {path} has {x.shape[1]} cols, expected {expected_cols}"
        )
    return x


def write_container(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write named matrices into one file behind a table of contents."""
    names = list(entries)
    toc_size = 4 + sum(4 + len(n.encode()) + 8 for n in names)
    blobs = [pack_matrix(entries[n]) for n in names]
    offsets = []
    pos = toc_size
    for blob in blobs:
        offsets.append(pos)
        pos += len(blob)
    out = bytearray(struct.pack("<I", len(names)))
    for name, off in zip(names, offsets):
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", off)
    for blob in blobs:
        out += blob
    Path(path).write_bytes(bytes(out))


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise DataFormatError("truncated file: container header incomplete")
    (count,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    toc = []
    for _ in range(count):
        if len(buf) - pos < 4:
            raise DataFormatError("truncated file: table of contents incomplete")
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) - pos < name_len + 8:
            raise DataFormatError("truncated file: table of contents incomplete")
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        (offset,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        toc.append((name, offset))
    return {name: unpack_matrix(buf, offset) for name, offset in toc}
