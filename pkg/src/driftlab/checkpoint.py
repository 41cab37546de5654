"""Parameter checkpoint file format.

Layout: magic ``SDLAB1``, one endianness byte (1 = little), parameter
count (u64), then for each parameter: name length (u32) + UTF-8 name,
rank (u32), extents (u64 each), raw little-endian float64 data. Round
trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SDLAB1"
LITTLE_ENDIAN = 1


class CheckpointError(Exception):
    pass


def save_params(path, params: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", LITTLE_ENDIAN))
        fh.write(struct.pack("<Q", len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8").tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint file")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals[0] if len(vals) == 1 else vals

    endian = take("<B")
    if endian != LITTLE_ENDIAN:
        raise CheckpointError(f"{path}: unsupported endianness byte {endian}")
    count = take("<Q")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = take("<I")
        if off + name_len > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        rank = take("<I")
        shape = tuple(take("<Q") for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(raw[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
        params[name] = arr
    return params
