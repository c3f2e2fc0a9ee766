"""Binary checkpoint format.

Layout (little-endian)::

    b"MMXP" | u32 version | u32 header_len | header (UTF-8 JSON) |
    u32 n_params | n_params x (u32 name_len | name | u32 rank | rank x u32 dim | f64 data)

The JSON header holds the model config, the vocabulary and training metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ValidationError
from .model import ModelCheckpoint, ModelConfig, parameter_shapes
from .tokenizer import WordPieceVocab

MAGIC = b"MMXP"
FORMAT_VERSION = 1


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    ckpt.validate()
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.tokens if ckpt.vocab is not None else None,
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    names = list(parameter_shapes(ckpt.config))
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: ModelCheckpoint, path) -> str:
    """Write ``ckpt`` and return the sha256 of the written bytes."""
    blob = to_bytes(ckpt)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(blob: bytes) -> ModelCheckpoint:
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    hlen = r.u32("header length")
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    expected = parameter_shapes(config)
    params = {}
    count = r.u32("parameter count")
    for _ in range(count):
        name = r.take(r.u32("name length"), "parameter name").decode("utf-8", errors="replace")
        rank = r.u32(f"rank of {name}")
        dims = tuple(r.u32(f"dims of {name}") for _ in range(rank))
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name!r} in checkpoint")
        if dims != expected[name]:
            raise CheckpointError(
                f"parameter {name!r} has shape {dims}, config implies {expected[name]}"
            )
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(8 * n, f"data of {name}"), dtype="<f8").astype(np.float64)
        params[name] = data.reshape(dims)
    missing = [k for k in expected if k not in params]
    if missing:
        raise CheckpointError(f"parameter {missing[0]!r} missing from checkpoint")
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after last parameter")
    vocab = WordPieceVocab(header["vocab"]) if header.get("vocab") is not None else None
    ckpt = ModelCheckpoint(config, params, vocab, header.get("meta", {}))
    try:
        ckpt.validate()
    except ValidationError as exc:
        raise CheckpointError(str(exc)) from exc
    return ckpt


def load_checkpoint(path) -> ModelCheckpoint:
    return from_bytes(Path(path).read_bytes())


def checkpoint_hash(ckpt: ModelCheckpoint) -> str:
    return hashlib.sha256(to_bytes(ckpt)).hexdigest()
