"""Dataset readers and writers: numeric CSV and IDX tensors."""
from __future__ import annotations

import struct

import numpy as np

IDX_U8_TENSOR = 0x00000803
IDX_U8_VECTOR = 0x00000801


def read_csv(path):
    """Rows are samples; the last column is the target.  Returns ``(X, y)``."""
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return data[:, :-1], data[:, -1]


def write_csv(path, X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    with open(path, "w", newline="\n") as fh:
        for row in np.hstack([X, y]):
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def read_idx(path):
    """Read a big-endian IDX file of unsigned bytes.

    Image tensors (magic 0x00000803) come back as float64 rescaled to [0, 1];
    label vectors (0x00000801) as int64.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError("truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_U8_TENSOR, IDX_U8_VECTOR):
        raise ValueError(f"unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise ValueError(f"IDX payload has {len(raw) - header} bytes, expected {count}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)
    if magic == IDX_U8_VECTOR:
        return data.astype(np.int64)
    return data.astype(np.float64) / 255.0


def write_idx(path, array):
    """Write a ``(n,)`` label vector or an ``(n, rows, cols)`` byte tensor."""
    arr = np.asarray(array)
    if arr.ndim not in (1, 3):
        raise ValueError("IDX writer handles 1-D labels or 3-D image stacks")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ValueError("IDX writer only handles values in [0, 255]")
    arr = arr.astype(np.uint8)
    magic = IDX_U8_VECTOR if arr.ndim == 1 else IDX_U8_TENSOR
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
