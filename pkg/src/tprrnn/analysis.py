"""Representation similarity analysis.

Unique sentences from a split are encoded, passed through one of the
update (or query) MLPs, compared by cosine similarity and ordered by
average-linkage agglomerative clustering.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform

from . import data_babi as db
from .encoder import Vocabulary, encode_sentence
from .model import ModelParams, mlp_forward

UPDATE_REPS = {"e1": "e1", "e2": "e2", "r1": "r1", "r2": "r2", "r3": "r3"}
QUERY_REPS = {"q_n": "n", "q_r1": "l1", "q_r2": "l2", "q_r3": "l3"}
REPS = {**UPDATE_REPS, **QUERY_REPS}


@dataclass
class RepMatrix:
    sentences: list[str]
    values: np.ndarray   # (n_sentences, dim)
    which: str


@dataclass
class Dendrogram:
    merges: list[tuple[int, int, float]]   # scipy cluster ids, distance 1 - cos
    leaf_order: list[int]
    linkage: np.ndarray | None = None

    def cut(self, n_clusters: int) -> np.ndarray:
        """Flat cluster labels (0-based) for the leaves, cutting into ``n_clusters``."""
        if self.linkage is None:
            return np.zeros(len(self.leaf_order), dtype=int)
        return hierarchy.fcluster(self.linkage, n_clusters, criterion="maxclust") - 1


def unique_sentences(samples: Sequence[db.Sample], questions: bool = False) -> list[list[str]]:
    """Distinct sentences in first-seen order."""
    seen, out = set(), []
    for s in samples:
        for sent in ([s.question] if questions else s.story):
            key = tuple(sent)
            if key not in seen:
                seen.add(key)
                out.append(list(sent))
    return out


def collect_reps(params: ModelParams, vocab: Vocabulary, samples: Sequence[db.Sample],
                 which: str) -> RepMatrix:
    """MLP outputs for every unique statement (or question, for ``q_*``) sentence."""
    if which not in REPS:
        raise ValueError(f"unknown representation {which!r}; choose from {sorted(REPS)}")
    sents = unique_sentences(samples, questions=which.startswith("q_"))
    mlp = params.mlp(REPS[which])
    rows = [mlp_forward(encode_sentence(vocab.encode(s, params.config.k), params.encoder), mlp)
            for s in sents]
    values = np.array(rows).reshape(len(rows), -1)
    return RepMatrix([" ".join(s) for s in sents], values, which)


def cosine_matrix(reps) -> np.ndarray:
    """Pairwise cosine similarity; rows with zero norm get similarity 0."""
    X = np.asarray(reps.values if isinstance(reps, RepMatrix) else reps, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = X / safe[:, None]
    S = np.clip(U @ U.T, -1.0, 1.0)
    zero = norms == 0
    S[zero, :] = 0.0
    S[:, zero] = 0.0
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


def hcluster(similarity: np.ndarray) -> tuple[Dendrogram, np.ndarray]:
    """Average-linkage clustering on ``1 - similarity``.

    Returns the dendrogram and the similarity matrix with rows and columns
    in leaf order.
    """
    S = np.asarray(similarity, dtype=np.float64)
    n = S.shape[0]
    if n < 2:
        return Dendrogram([], list(range(n))), S.copy()
    D = np.clip(1.0 - S, 0.0, None)
    np.fill_diagonal(D, 0.0)
    Z = hierarchy.linkage(squareform(D, checks=False), method="average")
    order = hierarchy.leaves_list(Z)
    merges = [(int(a), int(b), float(d)) for a, b, d, _ in Z]
    return Dendrogram(merges, order.tolist(), Z), S[np.ix_(order, order)]


def cluster_contrast(similarity: np.ndarray, labels: np.ndarray) -> float:
    """Mean within-cluster minus mean between-cluster similarity (off-diagonal)."""
    S = np.asarray(similarity)
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    within = S[same & off]
    between = S[~same]
    if within.size == 0 or between.size == 0:
        return 0.0
    return float(within.mean() - between.mean())


def best_cut(similarity: np.ndarray, dendrogram: Dendrogram,
             sizes=range(3, 9)) -> tuple[int, float]:
    """Cluster count (among ``sizes``) with the largest contrast, and that contrast."""
    best = (0, -np.inf)
    for n in sizes:
        labels = dendrogram.cut(n)
        n_found = len(set(labels.tolist()))
        if n_found < min(sizes):
            continue
        c = cluster_contrast(similarity, labels)
        if c > best[1]:
            best = (n_found, c)
    return best


def to_pgm(matrix: np.ndarray) -> bytes:
    """Binary grayscale PGM with values in [-1, 1] mapped to [0, 255]."""
    M = np.asarray(matrix, dtype=np.float64)
    pix = np.rint((np.clip(M, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    h, w = pix.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    magic, size, _maxval, pixels = data.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in size.split())
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def export(matrix: np.ndarray, dendrogram: Dendrogram, sentences: Sequence[str],
           out_dir, stem: str = "similarity") -> dict[str, Path]:
    """Write the reordered matrix as CSV and PGM plus the leaf-ordered sentence list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = dendrogram.leaf_order
    ids = [f"s{i}" for i in order]
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(["id"] + ids) + "\n")
        for rid, row in zip(ids, matrix):
            fh.write(",".join([rid] + [repr(float(v)) for v in row]) + "\n")
    pgm_path = out_dir / f"{stem}.pgm"
    pgm_path.write_bytes(to_pgm(matrix))
    txt_path = out_dir / f"{stem}_sentences.txt"
    with open(txt_path, "w", encoding="utf-8") as fh:
        for pos, i in enumerate(order):
            fh.write(f"{pos}\ts{i}\t{sentences[i]}\n")
    return {"csv": csv_path, "pgm": pgm_path, "sentences": txt_path}


def read_csv_matrix(path) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")[1:]
        rows = [line.rstrip("\n").split(",")[1:] for line in fh if line.strip()]
    return header, np.array(rows, dtype=np.float64)
