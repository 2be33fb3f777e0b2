"""Binary parameter checkpoints.

Layout: magic ``SVDCKPT1``, then for each named parameter
a length-prefixed UTF-8 name (8-byte little-endian length), an 8-byte
little-endian rank, the dims as little-endian 8-byte integers, and the raw
little-endian float64 data. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SVDCKPT1"


class CheckpointError(RuntimeError):
    """Malformed or truncated checkpoint file."""


def save_checkpoint(path, params: "OrderedDict[str, Tensor]") -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, t in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    pos = len(MAGIC)
    out: OrderedDict[str, np.ndarray] = OrderedDict()

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        out[name] = data.astype(np.float64)
    return out
