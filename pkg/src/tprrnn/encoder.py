"""Vocabulary, word embeddings and the position-weighted sentence encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad

PAD = "<pad>"
PAD_ID = 0


class SentenceTooLongError(ValueError):
    pass


class Vocabulary:
    """Bijective token <-> id map with the padding token fixed at id 0."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = [PAD]
        self.token_to_id: dict[str, int] = {PAD: PAD_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.token_to_id.get(token)
        if idx is None:
            idx = len(self.id_to_token)
            self.token_to_id[token] = idx
            self.id_to_token.append(token)
        return idx

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __getitem__(self, token: str) -> int:
        return self.token_to_id[token]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def encode(self, tokens: Sequence[str], k: int | None = None) -> list[int]:
        """Map tokens to ids, right-padding to ``k`` when given."""
        ids = [self.token_to_id[t] for t in tokens]
        if k is not None:
            if len(ids) > k:
                raise SentenceTooLongError(f"sentence of {len(ids)} tokens exceeds k={k}")
            ids = ids + [PAD_ID] * (k - len(ids))
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids if i != PAD_ID]


@dataclass
class EncoderParams:
    embeddings: np.ndarray   # (vocab_size, dim_symbol), row 0 is PAD
    positions: np.ndarray    # (k, dim_symbol)

    @property
    def k(self) -> int:
        return self.positions.shape[0]


def init_encoder(vocab_size: int, dim_symbol: int, k: int,
                 rng: np.random.Generator) -> EncoderParams:
    embeddings = rng.uniform(-0.01, 0.01, size=(vocab_size, dim_symbol))
    embeddings[PAD_ID] = 0.0
    positions = np.full((k, dim_symbol), 1.0 / k)
    return EncoderParams(embeddings, positions)


def encode_sentence(word_ids: Sequence[int], params: EncoderParams) -> np.ndarray:
    """``s = sum_i d_i * p_i`` for one sentence, padded to ``k``."""
    ids = np.asarray(word_ids, dtype=np.int64)
    k = params.k
    if ids.shape[-1] > k:
        raise SentenceTooLongError(f"sentence of {ids.shape[-1]} tokens exceeds k={k}")
    if ids.shape[-1] < k:
        pad = np.zeros(ids.shape[:-1] + (k - ids.shape[-1],), dtype=np.int64)
        ids = np.concatenate([ids, pad], axis=-1)
    d = params.embeddings[ids]
    d[ids == PAD_ID] = 0.0
    return (d * params.positions).sum(axis=-2)


def encode_var(embeddings: ad.Variable, positions: ad.Variable, ids) -> ad.Variable:
    """Differentiable encoder for a batch of id arrays of shape (..., k)."""
    d = ad.embedding_gather(embeddings, ids)
    return ad.sum(ad.hadamard(d, positions), axis=-2)
