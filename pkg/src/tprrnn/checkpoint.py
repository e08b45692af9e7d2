"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"TPRRNN1\\0"
    u32 entry count
    per entry: u32 name length, UTF-8 name, u8 order, u32 dim * order,
               f64 data (row-major)
    u32 token count, then per token: u32 length, UTF-8 bytes
    u32 config length, UTF-8 JSON config

Order 0 entries hold a single scalar (the layer-norm gain and shift).
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .encoder import Vocabulary
from .model import ModelConfig, ModelParams

MAGIC = b"TPRRNN1\x00"


class CheckpointFormatError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def dumps(params: ModelParams, vocab: Vocabulary, config: dict) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(_u32(len(params.arrays)))
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        out.write(_str(name))
        out.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            out.write(_u32(d))
        out.write(arr.tobytes(order="C"))
    out.write(_u32(len(vocab)))
    for tok in vocab.id_to_token:
        out.write(_str(tok))
    out.write(_str(json.dumps(config, sort_keys=True)))
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def str(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"bad UTF-8 in checkpoint: {exc}") from None


def loads(data: bytes) -> tuple[ModelParams, Vocabulary, dict]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a TPR-RNN checkpoint (bad magic)")
    arrays = {}
    for _ in range(r.u32()):
        name = r.str()
        order = struct.unpack("<B", r.take(1))[0]
        if order > 3:
            raise CheckpointFormatError(f"{name}: unsupported order {order}")
        dims = tuple(r.u32() for _ in range(order))
        count = int(np.prod(dims)) if dims else 1
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(
            np.float64).reshape(dims)
    vocab = Vocabulary()
    n_tokens = r.u32()
    tokens = [r.str() for _ in range(n_tokens)]
    if not tokens or tokens[0] != vocab.id_to_token[0]:
        raise CheckpointFormatError("vocabulary must start with the padding token")
    for tok in tokens[1:]:
        vocab.add(tok)
    if len(vocab) != n_tokens:
        raise CheckpointFormatError("vocabulary contains duplicate tokens")
    try:
        config = json.loads(r.str())
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"bad config blob: {exc}") from None
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after checkpoint")
    try:
        model_cfg = ModelConfig(**config["model"])
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"config lacks model dimensions: {exc}") from None
    params = ModelParams(model_cfg, arrays)
    try:
        params.check_shapes()
    except ValueError as exc:
        raise CheckpointFormatError(str(exc)) from None
    if model_cfg.vocab_size != len(vocab):
        raise CheckpointFormatError("vocabulary size does not match the model")
    return params, vocab, config


def save(params: ModelParams, vocab: Vocabulary, config: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(params, vocab, config))
    tmp.replace(path)


def load(path) -> tuple[ModelParams, Vocabulary, dict]:
    return loads(Path(path).read_bytes())
