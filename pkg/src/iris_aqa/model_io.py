"""Versioned little-endian binary container for trained models.

Layout::

    b"IRIS"  u32 version  u32 variant tag
    u32 meta length, UTF-8 JSON meta (sorted keys)
    u32 array count, then per array (sorted by name):
        u16 name length, UTF-8 name, u32 ndim, ndim x u64 dims, float64 data

Saving the same parameters twice gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError
from .pipeline import ModelParams, ModelVariant

MAGIC = b"IRIS"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def dumps(params: ModelParams) -> bytes:
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(params.variant.tag)]
    meta = json.dumps(params.meta, sort_keys=True).encode("utf-8")
    parts += [_U32.pack(len(meta)), meta]
    flat = params.flat()
    parts.append(_U32.pack(len(flat)))
    for name in sorted(flat):
        arr = np.asarray(flat[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts += [_U16.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U64.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"model file truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, s: struct.Struct) -> int:
        return s.unpack(self.take(s.size))[0]


def loads(data: bytes) -> ModelParams:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFormatError("not a model file (bad magic bytes)")
    version = r.unpack(_U32)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    tag = r.unpack(_U32)
    variants = list(ModelVariant)
    if tag >= len(variants):
        raise ModelFormatError(f"unknown variant tag {tag}")
    try:
        meta = json.loads(r.take(r.unpack(_U32)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt model metadata: {exc}") from None
    flat: dict[str, np.ndarray] = {}
    for _ in range(r.unpack(_U32)):
        name = r.take(r.unpack(_U16)).decode("utf-8")
        shape = tuple(r.unpack(_U64) for _ in range(r.unpack(_U32)))
        count = int(np.prod(shape, dtype=np.int64))
        flat[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(float).reshape(shape)
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after model data")
    if "dim" not in meta:
        raise ModelFormatError("model metadata lacks the embedding dimension")
    return ModelParams.from_flat(variants[tag], flat, meta)


def save_model(path: Path, params: ModelParams) -> None:
    Path(path).write_bytes(dumps(params))


def load_model(path: Path) -> ModelParams:
    return loads(Path(path).read_bytes())
