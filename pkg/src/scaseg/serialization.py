"""Flat binary tensor and checkpoint formats.

Tensor blob layout (little-endian throughout):

    magic   4 bytes  "SASF"
    version u32      currently 1
    rank    u32
    dims    rank * u64
    dtype   u8       0 = float32, 1 = float64
    payload raw row-major values

A checkpoint is a length-prefixed name table followed by the tensor blobs
in the same order:

    count   u32
    count * (u32 name length, utf-8 name bytes)
    count * tensor blob
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError
from .tensor import Tensor

MAGIC = b"SASF"
VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(fh, t: Tensor) -> None:
    data = t.data
    tag = _DTYPE_TAGS[data.dtype]
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, data.ndim))
    fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    fh.write(struct.pack("<B", tag))
    fh.write(np.ascontiguousarray(data, dtype=_TAG_DTYPES[tag]).tobytes())


def read_tensor(fh) -> Tensor:
    magic = fh.read(4)
    if magic != MAGIC:
        raise DataError(f"bad tensor file magic {magic!r}")
    version, rank = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise DataError(f"unsupported tensor format version {version}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    (tag,) = struct.unpack("<B", fh.read(1))
    if tag not in _TAG_DTYPES:
        raise DataError(f"unknown dtype tag {tag}")
    dtype = _TAG_DTYPES[tag]
    count = int(np.prod(dims)) if rank else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise DataError("truncated tensor payload")
    arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return Tensor(arr)


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, t)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(path, named_tensors) -> None:
    """Write an ordered list of (name, Tensor) pairs."""
    items = list(named_tensors)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(items)))
        for name, _ in items:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for _, t in items:
            write_tensor(fh, t)


def load_checkpoint(path) -> list[tuple[str, Tensor]]:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4:
            raise DataError("truncated checkpoint header")
        (count,) = struct.unpack("<I", head)
        names = []
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            names.append(fh.read(n).decode("utf-8"))
        return [(name, read_tensor(fh)) for name in names]
