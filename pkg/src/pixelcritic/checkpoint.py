"""Binary parameter checkpoints (``PXC1``).

Layout: the magic bytes ``PXC1``, then per named parameter::

    u32 LE name length | UTF-8 name | u32 LE rank | u32 LE dims... | float64 LE values

Parameters are written in the order given and read back until EOF.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"PXC1"


class CheckpointError(ValueError):
    pass


def encode_params(params: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_params(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"unknown checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    out: dict[str, np.ndarray] = {}
    pos = 4
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointError(f"truncated data for parameter {name!r}")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(dims)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return out


def save_params(path: str | os.PathLike, params: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_params(params))


def load_params(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_params(fh.read())
