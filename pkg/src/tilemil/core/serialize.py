"""Little-endian binary tensor records and named-tensor containers.

Record layout::

    rank     u32
    extents  u64 * rank
    dtype    u8   (0 = f32, 1 = f64, 2 = i64)
    values   rank-product items, row-major, little-endian

A container prefixes a magic string, a UTF-8 JSON metadata blob and a
count, then stores ``(name_len u32, name, record)`` entries.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import FormatError

MAGIC = b"MBTC\x01"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iu" and arr.dtype != np.int64:
        arr = arr.astype(np.int64)
    tag = _TAGS.get(arr.dtype)
    if tag is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(struct.pack("<B", tag))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("unexpected end of file")
    return buf


def read_array(fh: BinaryIO) -> np.ndarray:
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    (tag,) = struct.unpack("<B", _read_exact(fh, 1))
    if tag not in _DTYPES:
        raise FormatError(f"unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(fh, count * dtype.itemsize), dtype=dtype)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_array(fh, arr)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise FormatError(f"{path}: not a tensor container")
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, n).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, n).decode("utf-8")
            out[name] = read_array(fh)
    return out, meta
