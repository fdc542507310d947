"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"COAD"                 magic
    u32 version
    u32 entry count
    per entry:
        u32 name length, name bytes (utf-8)
        u64 rank, rank x u64 extents
        prod(extents) x f32 values
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"COAD"
VERSION = 1


class CheckpointError(ValueError):
    code = "checkpoint"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class VersionMismatchError(CheckpointError):
    code = "version"


class TruncatedError(CheckpointError):
    code = "truncated"

    def __init__(self, message: str, parameter: str = ""):
        super().__init__(message)
        self.parameter = parameter


def dumps(state: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> Dict[str, np.ndarray]:
    view = memoryview(blob)
    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {bytes(view[:4])!r} != {MAGIC!r}")
    pos = 4

    def take(n: int, what: str, param: str = ""):
        nonlocal pos
        if pos + n > len(view):
            where = f" in parameter {param!r}" if param else ""
            raise TruncatedError(f"checkpoint truncated while reading {what}{where}", param)
        out = view[pos:pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads version {VERSION}")
    state = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"name length of entry {i}"))
        name = bytes(take(nlen, f"name of entry {i}")).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8, "rank", name))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "shape", name))
        size = int(np.prod(shape, dtype=np.int64))
        data = take(4 * size, "tensor payload", name)
        state[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after {count} entries")
    return state


def save_checkpoint(model, path: Union[str, Path, None] = None) -> bytes:
    """Serialize every named parameter; also write to ``path`` when given."""
    blob = dumps({n: p.data for n, p in model.named_parameters()})
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_checkpoint(source: Union[bytes, str, Path], model=None):
    """Parse a checkpoint; load it into ``model`` when given and return that model.

    Without a model the raw ``{name: array}`` mapping is returned.
    """
    blob = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    state = loads(bytes(blob))
    if model is None:
        return state
    model.load_state_dict(state)
    return model
