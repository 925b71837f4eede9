"""HRTF: a tiny little-endian, row-major tensor file format.

Layout::

    b"HRTF" | u8 version (=1) | u8 dtype code | u8 ndim | ndim x u64 dims | payload

dtype codes: 1 = float32, 2 = uint8.  There is no padding anywhere, so a file
is exactly ``7 + 8 * ndim + nbytes(payload)`` bytes long.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, ShapeError, DTypeError

MAGIC = b"HRTF"
VERSION = 1
MAX_DIMS = 8
HEADER_FIXED = 7

_CODE_BY_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2}
_DTYPE_BY_CODE = {1: np.dtype("<f4"), 2: np.dtype("u1")}


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.dtype not in _CODE_BY_DTYPE:
        raise DTypeError(f"HRTF stores float32 or uint8 only, got {t.dtype}")
    if t.ndim > MAX_DIMS:
        raise ShapeError(f"HRTF supports at most {MAX_DIMS} dims, got {t.ndim}")
    if any(s < 1 for s in t.shape):
        raise ShapeError(f"every dimension must be >= 1, got shape {t.shape}")
    header = MAGIC + bytes([VERSION, _CODE_BY_DTYPE[t.dtype], t.ndim])
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=_DTYPE_BY_CODE[_CODE_BY_DTYPE[t.dtype]]).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'HRTF'", 0)
    if len(buf) < HEADER_FIXED:
        raise FormatError("truncated header", len(buf))
    if buf[4] != VERSION:
        raise FormatError(f"unsupported version {buf[4]}", 4)
    code = buf[5]
    if code not in _DTYPE_BY_CODE:
        raise FormatError(f"unknown dtype code {code}", 5)
    ndim = buf[6]
    if ndim > MAX_DIMS:
        raise FormatError(f"ndim {ndim} exceeds {MAX_DIMS}", 6)
    header_len = HEADER_FIXED + 8 * ndim
    if len(buf) < header_len:
        raise FormatError("truncated dimension table", len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, HEADER_FIXED)
    for i, s in enumerate(shape):
        if s < 1:
            raise FormatError(f"dimension {i} is zero", HEADER_FIXED + 8 * i)
    dtype = _DTYPE_BY_CODE[code]
    count = 1
    for s in shape:
        count *= s
    nbytes = count * dtype.itemsize
    if nbytes >= 2**63:
        raise FormatError("dimension product overflows", HEADER_FIXED)
    have = len(buf) - header_len
    if have < nbytes:
        raise FormatError(
            f"truncated payload: need {nbytes} bytes for shape {list(shape)}, found {have}",
            len(buf),
        )
    if have > nbytes:
        raise FormatError(f"{have - nbytes} trailing bytes after payload", header_len + nbytes)
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=header_len)
    return arr.astype(dtype.newbyteorder("="), copy=True).reshape(shape)


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    data = encode_tensor(t)
    with open(path, "wb") as fh:
        fh.write(data)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def serialized_size(t: np.ndarray) -> int:
    return HEADER_FIXED + 8 * t.ndim + t.nbytes
