"""SPT1 tensor files.

Layout: ASCII ``SPT1``, one dtype byte, one ndim byte, ``ndim`` little-endian
u32 dims, then the raw little-endian payload in row-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"SPT1"

# code 2 widens integer grids whose values do not fit a byte (superpixel ids)
DTYPES = {0: np.dtype("<u1"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}
CODES = {dt: code for code, dt in DTYPES.items()}


class TensorFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


def _code_for(arr: np.ndarray) -> tuple[int, np.ndarray]:
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        return 0, arr.astype("<u1", copy=False)
    if np.issubdtype(arr.dtype, np.floating):
        return 1, arr.astype("<f8", copy=False)
    if np.issubdtype(arr.dtype, np.integer):
        if arr.size and (arr.min() < np.iinfo(np.int32).min or arr.max() > np.iinfo(np.int32).max):
            raise ValueError("integer tensor does not fit in i32")
        if arr.size == 0 or (arr.min() >= 0 and arr.max() <= 255):
            return 0, arr.astype("<u1")
        return 2, arr.astype("<i4")
    raise ValueError(f"unsupported dtype {arr.dtype}")


def encode(tensor) -> bytes:
    arr = np.ascontiguousarray(tensor)
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    code, arr = _code_for(arr)
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode(buf: bytes, expect_dtype: np.dtype | None = None) -> np.ndarray:
    if len(buf) < 6:
        raise TensorFormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[:4]!r}", 0)
    code, ndim = buf[4], buf[5]
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}", 4)
    dtype = DTYPES[code]
    if expect_dtype is not None and np.dtype(expect_dtype) != dtype:
        raise TensorFormatError(f"dtype mismatch: file has {dtype}, expected {np.dtype(expect_dtype)}", 4)
    end = 6 + 4 * ndim
    if len(buf) < end:
        raise TensorFormatError("truncated dims", len(buf))
    dims = struct.unpack(f"<{ndim}I", buf[6:end])
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - end < nbytes:
        raise TensorFormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - end}", len(buf))
    if len(buf) - end > nbytes:
        raise TensorFormatError("trailing bytes after payload", end + nbytes)
    arr = np.frombuffer(buf, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)), offset=end)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def tensor_write(path, tensor) -> None:
    data = encode(tensor)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def tensor_read(path, expect_dtype=None) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), expect_dtype)
