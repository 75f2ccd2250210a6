"""VSRT binary tensor records and named-tensor checkpoint files.

Record layout (little endian)::

    b"VSRT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim (1..6)
    | ndim x u32 extents | row-major payload

Checkpoint layout: ``u32 count`` then ``count`` times
``u16 name length | UTF-8 name | VSRT record``.
"""
from __future__ import annotations

import io
import os
import struct

import numpy as np

from .errors import BadHeader, BadMagic, Truncated
from .tensor import Tensor

MAGIC = b"VSRT"
VERSION = 1
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _array(x):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.dtype not in _CODES:
        raise BadHeader(f"unsupported dtype {arr.dtype}")
    if not 1 <= arr.ndim <= 6:
        raise BadHeader(f"ndim must be in 1..6, got {arr.ndim}")
    return arr


def encode_tensor(x):
    arr = _array(x)
    head = MAGIC + struct.pack("<BBB", VERSION, _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
    return head + payload


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise Truncated(f"expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_tensor(f):
    magic = f.read(4)
    if len(magic) < 4 and magic == MAGIC[: len(magic)]:
        raise Truncated("file ends inside magic")
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack("<BBB", _read_exact(f, 3, "header"))
    if version != VERSION:
        raise BadHeader(f"unsupported version {version}")
    if code not in _DTYPES:
        raise BadHeader(f"dtype code {code} out of range")
    if not 1 <= ndim <= 6:
        raise BadHeader(f"ndim {ndim} out of range 1..6")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"{ndim} extents"))
    if 0 in shape:
        raise BadHeader(f"zero extent in shape {shape}")
    dt = _DTYPES[code]
    n = int(np.prod(shape)) * dt.itemsize
    buf = _read_exact(f, n, "payload")
    arr = np.frombuffer(buf, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    return Tensor(arr)


def save_tensor(path, x):
    with open(path, "wb") as f:
        f.write(encode_tensor(x))


def load_tensor(path):
    with open(path, "rb") as f:
        return read_tensor(f)


def decode_tensor(buf):
    return read_tensor(io.BytesIO(buf))


def save_checkpoint(path, named):
    """Write ``{name: Tensor | ndarray}`` in insertion order, atomically."""
    chunks = [struct.pack("<I", len(named))]
    for name, x in named.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(raw)) + raw + encode_tensor(x))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path):
    out = {}
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, n, "name").decode("utf-8")
            out[name] = read_tensor(f)
    return out
