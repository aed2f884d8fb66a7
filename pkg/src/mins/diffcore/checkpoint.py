"""Binary parameter checkpoints.

Layout: ``MINCKPT1`` then, per parameter, ``u32 name_len | utf-8 name |
u32 rank | u32 extents... | f64 payload`` (all little-endian, row-major).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"MINCKPT1"


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d arrays 0-d
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def loads_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic bytes")
    out: Dict[str, np.ndarray] = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
    return out


def save_checkpoint(path: Union[str, Path], params: Dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return loads_checkpoint(Path(path).read_bytes())
