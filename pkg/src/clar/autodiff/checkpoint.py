"""Flat binary parameter checkpoints.

Layout (all integers little-endian uint32)::

    b"CLARPRM1"
    repeated until EOF:
        name_len, name (UTF-8), rank, dim_0 .. dim_{rank-1},
        prod(dims) little-endian float64 values
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CLARPRM1"


class CheckpointError(ValueError):
    pass


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic header")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def need(n: int) -> None:
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated record at byte {pos}")

    while pos < len(raw):
        need(4)
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        need(name_len + 4)
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        need(8 * count)
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return out
