"""Model checkpoints: a little-endian binary container carrying the full
model configuration, the tokenizer vocabulary hash, and every named weight
tensor as float32.

Layout: magic "UMOC", u32 version, u32 config length + config JSON (sorted
keys), u32 hash length + vocabulary sha256, u32 tensor count, then per
tensor: u32 name length, name bytes, u32 rank, u32 dims, f32 data. Tensors
are written sorted by name so identical weights produce identical bytes.

Loading into a model verifies the stored config and vocabulary hash against
the live ones and the tensor set against the model's parameters; any
disagreement is a CheckpointMismatch rather than a silent cast.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import CheckpointMismatch, FormatError
from .model import ModelConfig
from .tokenizer import vocab_hash

MAGIC = b"UMOC"
VERSION = 1

_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    version: int
    config: ModelConfig
    vocab_sha: bytes
    tensors: dict[str, np.ndarray]


def _write_u32(f, value: int) -> None:
    f.write(_U32.pack(value))


def write_checkpoint(path, config: ModelConfig, vocab_sha: bytes, tensors) -> None:
    """Low-level writer; save_checkpoint is the model-facing wrapper."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        _write_u32(f, VERSION)
        _write_u32(f, len(blob))
        f.write(blob)
        _write_u32(f, len(vocab_sha))
        f.write(vocab_sha)
        _write_u32(f, len(tensors))
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name], dtype=_F32)
            encoded = name.encode("utf-8")
            _write_u32(f, len(encoded))
            f.write(encoded)
            _write_u32(f, data.ndim)
            for dim in data.shape:
                _write_u32(f, dim)
            f.write(data.tobytes())


def save_checkpoint(path, model) -> None:
    tensors = {
        name: param.detach().cpu().numpy() for name, param in model.named_parameters()
    }
    write_checkpoint(path, model.cfg, vocab_hash(), tensors)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def read_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    if reader.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version = reader.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(reader.take(reader.u32())))
    except (ValueError, KeyError, TypeError) as err:
        raise FormatError(f"{path}: bad config block: {err}") from err
    vocab_sha = reader.take(reader.u32())
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        flat = np.frombuffer(reader.take(count * 4), dtype=_F32)
        tensors[name] = flat.reshape(shape).copy()
    if reader.pos != len(reader.data):
        raise FormatError(f"{path}: trailing bytes after tensor data")
    return Checkpoint(version, config, vocab_sha, tensors)


def load_checkpoint(path, model) -> Checkpoint:
    """Read a checkpoint and load its weights into model, verifying config,
    vocabulary, and the exact tensor set first."""
    ckpt = read_checkpoint(path)
    if ckpt.config.to_dict() != model.cfg.to_dict():
        raise CheckpointMismatch(
            f"{path}: stored config {ckpt.config.to_dict()} "
            f"does not match model config {model.cfg.to_dict()}"
        )
    if ckpt.vocab_sha != vocab_hash():
        raise CheckpointMismatch(f"{path}: vocabulary hash mismatch")
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(params))
    if missing or extra:
        raise CheckpointMismatch(
            f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})"
        )
    for name, param in params.items():
        stored = ckpt.tensors[name]
        if tuple(stored.shape) != tuple(param.shape):
            raise CheckpointMismatch(
                f"{path}: {name} has shape {stored.shape}, expected {tuple(param.shape)}"
            )
    with torch.no_grad():
        for name, param in params.items():
            param.copy_(torch.from_numpy(ckpt.tensors[name]).to(param.dtype))
    return ckpt
