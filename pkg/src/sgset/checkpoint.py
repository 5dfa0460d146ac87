"""Binary checkpoint container.

Layout (all integers little-endian, unsigned):

    magic     8 bytes   b"SGSETCKP"
    version   u32       currently 1
    meta_len  u32       length of the UTF-8 JSON metadata blob
    meta      bytes     arbitrary JSON object (model config, step count, ...)
    count     u32       number of array entries
    entries   repeated  name_len u16, name utf-8,
                        dtype    u8  (1 = float32, 2 = float64),
                        ndim     u8,
                        shape    u32 * ndim,
                        data     little-endian raw buffer

Round-trips are bit-exact: buffers are written with explicit '<f4'/'<f8'
byte order and read back untouched, so save(load(x)) == x byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SGSETCKP"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


class CheckpointError(ValueError):
    """File is not a checkpoint this version can read."""


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float arrays plus a JSON metadata object to `path`.

    `arrays` values may be Tensors or ndarrays; anything with a `.data`
    ndarray attribute is unwrapped.
    """
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<I", len(arrays)))
        for name, value in arrays.items():
            arr = np.asarray(getattr(value, "data", value))
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(
                    f"entry {name!r} has unsupported dtype {arr.dtype}; "
                    "only float32/float64 are stored")
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise CheckpointError(f"entry name too long ({len(name_bytes)} bytes)")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_checkpoint; returns (arrays, meta)."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "entry count"))
        arrays: dict[str, np.ndarray] = {}
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, f"entry {i} name length"))
            name = _read_exact(f, name_len, f"entry {i} name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, f"{name}: header"))
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise CheckpointError(f"{path}: {name}: unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"{name}: shape"))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            buf = _read_exact(f, n_bytes, f"{name}: data")
            # copy=True: frombuffer views are read-only, and loaded parameters
            # must be writable for optimizer updates.
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(
                dtype.newbyteorder("="), copy=True)
        trailing = f.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after last entry")
    return arrays, meta
