"""Binary checkpoint files.

Layout (little-endian)::

    b"XDSP"  magic
    u32      format version
    u64      metadata length, then that many bytes of UTF-8 JSON
    u32      tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  dtype code (0 = float32, 1 = float64)
        u8  rank, then rank x u64 dims
        raw scalars, row-major

The metadata JSON carries the training config, the vocabulary, lineage and
run statistics. Serialization is canonical (sorted keys, sorted tensor
names), so equal checkpoints produce equal bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .exceptions import CheckpointFormatError, CheckpointVersionError

MAGIC = b"XDSP"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    config: dict
    vocabulary: Vocabulary
    params: dict
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def lineage(self):
        return list(self.metadata.get("lineage", []))


def to_bytes(ckpt):
    meta = {"config": ckpt.config, "vocabulary": ckpt.vocabulary.tokens, "metadata": ckpt.metadata}
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(meta_blob)), meta_blob,
             struct.pack("<I", len(ckpt.params))]
    for name in sorted(ckpt.params):
        arr = np.asarray(ckpt.params[name])
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in DTYPE_CODES:
            raise CheckpointFormatError(f"tensor {name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", DTYPE_CODES[dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(blob):
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic: not an xdsp checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointVersionError(version, VERSION)
    (meta_len,) = r.unpack("<Q", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt metadata: {exc}") from None
    (count,) = r.unpack("<I", "tensor count")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        code, rank = r.unpack("<BB", f"header of {name}")
        if code not in CODE_DTYPES:
            raise CheckpointFormatError(f"tensor {name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        dtype = CODE_DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n * dtype.itemsize, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - r.pos} trailing bytes after last tensor")
    try:
        vocab = Vocabulary.from_tokens(meta["vocabulary"])
        return Checkpoint(meta["config"], vocab, params, meta.get("metadata", {}), version)
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"metadata missing field: {exc}") from None


def atomic_write_bytes(path, blob):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt, path):
    atomic_write_bytes(path, to_bytes(ckpt))


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
