"""CTNS tensor blobs and the named-record checkpoint container.

Blob layout: ``b"CTNS"``, version 0x01, dtype byte (0x01 float32, 0x02
float64), rank byte, ``rank`` little-endian u32 extents, then the row-major
little-endian payload. A checkpoint is a flat sequence of
``(u16 name length, utf-8 name, blob)`` records.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"CTNS"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, array) -> None:
    arr = np.asarray(array)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    fh.write(MAGIC + bytes([VERSION, code, arr.ndim]))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated CTNS data")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    header = _read_exact(fh, 7)
    if header[:4] != MAGIC:
        raise FormatError(f"bad magic {header[:4]!r}")
    version, code, rank = header[4], header[5], header[6]
    if version != VERSION:
        raise FormatError(f"unsupported CTNS version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def to_bytes(array) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path, array) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise FormatError(f"name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            write_tensor(fh, arr)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    while fh.tell() < len(data):
        (n,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, n).decode("utf-8")
        if name in out:
            raise FormatError(f"duplicate record {name!r}")
        out[name] = read_tensor(fh)
    return out
