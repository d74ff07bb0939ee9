"""DTF1 tensor container.

Layout (all little-endian)::

    b"DTF1" | rank: u32 | dims: rank x u32 | payload: prod(dims) x f32, row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimOverflow, NonFiniteInput, TruncatedPayload

MAGIC = b"DTF1"
_U32_MAX = 2**32 - 1
# refuse headers that would describe more than 2**40 elements
_MAX_ELEMENTS = 2**40


def encode_blob(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.ndim > _U32_MAX or any(d > _U32_MAX for d in arr.shape):
        raise DimOverflow(f"shape {arr.shape} does not fit u32 dims")
    arr = np.asarray(arr, dtype="<f4", order="C")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("tensor blobs hold finite values only")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + arr.tobytes(order="C")


def decode_blob(data: bytes) -> np.ndarray:
    if len(data) < 8:
        if data[:4] != MAGIC[: len(data)]:
            raise BadMagic("not a DTF1 blob")
        raise TruncatedPayload("blob header is incomplete")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    (rank,) = struct.unpack_from("<I", data, 4)
    header_len = 8 + 4 * rank
    if len(data) < header_len:
        raise TruncatedPayload(f"header declares rank {rank} but file holds {len(data)} bytes")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise DimOverflow(f"dims {dims} describe {count} elements")
    expected = count * 4
    payload = memoryview(data)[header_len:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"payload is {len(payload)} bytes, dims {dims} require {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def blob_write(tensor, path) -> None:
    Path(path).write_bytes(encode_blob(tensor))


def blob_read(path) -> np.ndarray:
    return decode_blob(Path(os.fspath(path)).read_bytes())
