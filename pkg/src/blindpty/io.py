"""PTYF array container and JSON sidecars.

Layout (little-endian)::

    b"PTYF" | u8 version (=1) | u8 dtype | u8 ndim | 5 zero bytes
    | ndim x u64 dims | row-major payload

dtype codes: 0 float32, 1 float64, 2 complex64, 3 complex128. Boolean arrays
(detector masks) are stored as float32 0/1.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

__all__ = [
    "PTYF_MAGIC",
    "PTYF_VERSION",
    "PtyfFormatError",
    "encode_ptyf",
    "decode_ptyf",
    "write_ptyf",
    "read_ptyf",
    "write_json",
    "read_json",
]

PTYF_MAGIC = b"PTYF"
PTYF_VERSION = 1
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<c8"), 3: np.dtype("<c16")}
_HEADER = struct.Struct("<4sBBB5s")


class PtyfFormatError(ValueError):
    pass


def _code_for(dtype) -> int:
    dtype = np.dtype(dtype)
    if dtype == np.bool_:
        return 0
    for code, dt in _CODES.items():
        if dtype.kind == dt.kind and dtype.itemsize == dt.itemsize:
            return code
    raise TypeError(f"unsupported dtype {dtype} for PTYF")


def encode_ptyf(arr) -> bytes:
    arr = np.asarray(arr)
    code = _code_for(arr.dtype)
    if arr.ndim > 255:
        raise PtyfFormatError("too many dimensions")
    data = np.ascontiguousarray(arr, dtype=_CODES[code])
    head = _HEADER.pack(PTYF_MAGIC, PTYF_VERSION, code, arr.ndim, b"\0" * 5)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + data.tobytes(order="C")


def decode_ptyf(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise PtyfFormatError("truncated header")
    magic, version, code, ndim, pad = _HEADER.unpack_from(buf)
    if magic != PTYF_MAGIC:
        raise PtyfFormatError("bad magic")
    if version != PTYF_VERSION:
        raise PtyfFormatError(f"unsupported PTYF version {version}")
    if code not in _CODES:
        raise PtyfFormatError(f"unknown dtype code {code}")
    if pad != b"\0" * 5:
        raise PtyfFormatError("nonzero padding bytes")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise PtyfFormatError("truncated dims")
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dt = _CODES[code]
    n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) != off + n * dt.itemsize:
        raise PtyfFormatError("payload size does not match header")
    return np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(shape).copy()


def write_ptyf(path, arr) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(encode_ptyf(arr))


def read_ptyf(path) -> np.ndarray:
    with open(os.fspath(path), "rb") as fh:
        return decode_ptyf(fh.read())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, obj) -> None:
    """Deterministic JSON (sorted keys, fixed indentation)."""
    with open(os.fspath(path), "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(os.fspath(path)) as fh:
        return json.load(fh)
