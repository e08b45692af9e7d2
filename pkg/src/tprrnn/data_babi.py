"""bAbI v1.2 parsing, vocabulary, batching and entity augmentation."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .encoder import PAD_ID, Vocabulary

_TOKEN = re.compile(r"\w+|[^\w\s]")
_TASK_FROM_NAME = re.compile(r"qa(\d+)_")


class BabiFormatError(ValueError):
    pass


class DatasetMissingError(FileNotFoundError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class RawStoryLine:
    line_id: int
    text: str
    answer: str | None = None
    supporting: list[int] | None = None

    @property
    def is_question(self) -> bool:
        return self.answer is not None


@dataclass
class Sample:
    """One question with every statement that preceded it in its story."""

    story: list[list[str]]
    question: list[str]
    answer: str
    task_id: int = 0
    entity: str | None = None   # set on augmented samples

    def key(self):
        return (tuple(map(tuple, self.story)), tuple(self.question), self.answer)


def parse_line(raw: str, lineno: int = 0) -> RawStoryLine:
    head, sep, rest = raw.partition(" ")
    if not sep or not head.isdigit():
        raise BabiFormatError(f"line {lineno}: expected a leading integer id: {raw!r}")
    fields = rest.split("\t")
    if len(fields) == 1:
        if "?" in fields[0]:
            raise BabiFormatError(f"line {lineno}: question without an answer field")
        return RawStoryLine(int(head), fields[0].strip())
    answer = fields[1].strip()
    if not answer:
        raise BabiFormatError(f"line {lineno}: empty answer field")
    support = None
    if len(fields) > 2 and fields[2].strip():
        support = [int(x) for x in fields[2].split()]
    return RawStoryLine(int(head), fields[0].strip(), answer.lower(), support)


def parse_lines(lines: Iterable[str], task_id: int = 0) -> list[Sample]:
    samples: list[Sample] = []
    story: list[list[str]] = []
    prev_id = 0
    for lineno, raw in enumerate(lines, 1):
        raw = raw.rstrip("\n")
        if not raw.strip():
            continue
        line = parse_line(raw, lineno)
        if line.line_id <= prev_id:
            story = []
        prev_id = line.line_id
        if line.is_question:
            # supporting ids are read but intentionally not kept
            samples.append(Sample([list(s) for s in story], tokenize(line.text),
                                  line.answer, task_id))
        else:
            story.append(tokenize(line.text))
    return samples


def task_id_from_path(path) -> int:
    m = _TASK_FROM_NAME.search(Path(path).name)
    return int(m.group(1)) if m else 0


def parse_task_file(path, task_id: int | None = None) -> list[Sample]:
    path = Path(path)
    if task_id is None:
        task_id = task_id_from_path(path)
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh, task_id)


def find_task_file(data_dir, task: int, split: str) -> Path:
    """Locate ``qa{task}_{split}.txt`` or ``qa{task}_<name>_{split}.txt``."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DatasetMissingError(f"bAbI data directory not found: {data_dir}")
    for pattern in (f"qa{task}_{split}.txt", f"qa{task}_*_{split}.txt"):
        hits = sorted(data_dir.glob(pattern))
        if hits:
            return hits[0]
    raise DatasetMissingError(f"no {split} file for task {task} in {data_dir}")


def load_task(data_dir, task: int, split: str) -> list[Sample]:
    return parse_task_file(find_task_file(data_dir, task, split), task)


def format_samples(samples: Iterable[Sample]) -> Iterator[str]:
    """bAbI lines, one story per sample, so the output re-parses to the same samples."""
    for s in samples:
        for i, sent in enumerate(s.story, 1):
            yield f"{i} {' '.join(sent)}\n"
        yield f"{len(s.story) + 1} {' '.join(s.question)}\t{s.answer}\t\n"


def write_babi_file(samples: Iterable[Sample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(format_samples(samples))


# vocabulary and encoding ---------------------------------------------------

def build_vocab(samples: Sequence[Sample]) -> tuple[Vocabulary, int]:
    """Vocabulary over all story, question and answer tokens, and ``k``.

    Answers are atomic tokens, including comma-joined ones like ``n,w``.
    Tokens are added in sorted order so the ids do not depend on sample
    order.
    """
    if not samples:
        raise ValueError("cannot build a vocabulary from no samples")
    tokens: set[str] = set()
    k = 0
    for s in samples:
        for sent in s.story:
            tokens.update(sent)
            k = max(k, len(sent))
        tokens.update(s.question)
        tokens.add(s.answer)
        k = max(k, len(s.question))
    return Vocabulary(sorted(tokens)), k


@dataclass
class EncodedSample:
    story: np.ndarray      # (T, k) int64
    question: np.ndarray   # (k,) int64
    answer: int
    task_id: int = 0
    entity: str | None = None


def encode_samples(samples: Iterable[Sample], vocab: Vocabulary, k: int) -> list[EncodedSample]:
    out = []
    for s in samples:
        story = np.array([vocab.encode(sent, k) for sent in s.story],
                         dtype=np.int64).reshape(len(s.story), k)
        out.append(EncodedSample(story, np.array(vocab.encode(s.question, k), dtype=np.int64),
                                 vocab[s.answer], s.task_id, s.entity))
    return out


@dataclass
class Batch:
    story: np.ndarray      # (B, T, k)
    mask: np.ndarray       # (B, T), 1.0 for real sentences
    question: np.ndarray   # (B, k)
    answer: np.ndarray     # (B,)
    task_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.answer.shape[0]


def collate(samples: Sequence[EncodedSample]) -> Batch:
    """Pad stories to the longest in the batch with all-PAD sentences."""
    B = len(samples)
    T = max(1, max(s.story.shape[0] for s in samples))
    k = samples[0].question.shape[0]
    story = np.full((B, T, k), PAD_ID, dtype=np.int64)
    mask = np.zeros((B, T))
    for i, s in enumerate(samples):
        n = s.story.shape[0]
        story[i, :n] = s.story
        mask[i, :n] = 1.0
    return Batch(story, mask, np.stack([s.question for s in samples]),
                 np.array([s.answer for s in samples], dtype=np.int64),
                 np.array([s.task_id for s in samples], dtype=np.int64))


def make_batches(samples: Sequence[EncodedSample], batch_size: int,
                 rng: np.random.Generator) -> Iterator[Batch]:
    """Endless stream of batches, reshuffled every epoch."""
    n = len(samples)
    if n == 0:
        raise ValueError("no samples to batch")
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield collate([samples[i] for i in order[start:start + batch_size]])


def iterate_batches(samples: Sequence[EncodedSample], batch_size: int) -> Iterator[Batch]:
    """One ordered pass, for evaluation."""
    for start in range(0, len(samples), batch_size):
        yield collate(samples[start:start + batch_size])


# systematic-generalisation augmentation -----------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    entities: tuple[str, ...] = ("alex", "glenn", "jordan", "mike", "logan")
    task_pool: tuple[int, ...] = (1, 6, 7, 8, 9, 11, 12, 13)
    pairs_per_cell: int = 500
    question_fraction: float = 0.2
    train_task_counts: tuple[int, ...] = (8, 6, 4, 2, 1)
    original_entities: tuple[str, ...] = ("mary", "john", "daniel", "sandra")
    seed: int = 0


class EntityCollisionError(ValueError):
    pass


def draw_train_subsets(spec: AugmentSpec) -> dict[str, tuple[int, ...]]:
    """Which tasks each new entity receives training stories for."""
    rng = np.random.default_rng([spec.seed, 1])
    out = {}
    for ent, count in zip(spec.entities, spec.train_task_counts):
        picked = rng.choice(len(spec.task_pool), size=count, replace=False)
        out[ent] = tuple(sorted(spec.task_pool[i] for i in picked))
    return out


def _rename(tokens: list[str], old: str, new: str) -> list[str]:
    return [new if t == old else t for t in tokens]


def _rewrite(s: Sample, old: str, new: str, task: int) -> Sample:
    return Sample([_rename(sent, old, new) for sent in s.story], _rename(s.question, old, new),
                  new if s.answer == old else s.answer, task, new)


def _make_cell(pool: Sequence[Sample], entity: str, task: int, spec: AugmentSpec,
               rng: np.random.Generator, exclude: frozenset = frozenset()) -> list[Sample]:
    """500 rewritten pairs for one (entity, task) cell.

    Rewrites whose :meth:`Sample.key` is in ``exclude`` are never drawn.
    """
    originals = set(spec.original_entities)
    in_question, story_only = [], []
    for idx, s in enumerate(pool):
        q_ents = sorted(originals.intersection(s.question))
        story_ents = sorted(originals.intersection(t for sent in s.story for t in sent))
        q_ents = [e for e in q_ents if _rewrite(s, e, entity, task).key() not in exclude]
        if q_ents:
            in_question.append((idx, q_ents))
        rest = [e for e in story_ents if e not in q_ents
                and _rewrite(s, e, entity, task).key() not in exclude]
        if rest:
            story_only.append((idx, rest))
    n_q = int(round(spec.pairs_per_cell * spec.question_fraction))
    n_s = spec.pairs_per_cell - n_q
    if (n_q and not in_question) or (n_s and not story_only):
        raise ValueError(f"task {task} has no samples eligible for entity rewriting")

    cell = []
    for candidates, count in ((in_question, n_q), (story_only, n_s)):
        picks = rng.choice(len(candidates), size=count, replace=len(candidates) < count)
        for p in picks:
            idx, names = candidates[p]
            old = names[rng.integers(len(names))]
            cell.append(_rewrite(pool[idx], old, entity, task))
    order = rng.permutation(len(cell))
    return [cell[i] for i in order]


def augment_systematic(base_train_by_task: Mapping[int, Sequence[Sample]],
                       spec: AugmentSpec = AugmentSpec(),
                       base_test_by_task: Mapping[int, Sequence[Sample]] | None = None,
                       ) -> tuple[list[Sample], list[Sample]]:
    """Generate ``(extra_train, extra_test)`` with the new entities.

    Every (entity, task) cell goes to the test set, built from
    ``base_test_by_task`` (defaults to the training pools). Only the cells
    drawn by :func:`draw_train_subsets` go to the training set.
    """
    base_test_by_task = base_test_by_task or base_train_by_task
    known = {t for pools in (base_train_by_task, base_test_by_task)
             for task in spec.task_pool for s in pools[task]
             for t in (*(w for sent in s.story for w in sent), *s.question, s.answer)}
    clash = known.intersection(spec.entities)
    if clash:
        raise EntityCollisionError(f"new entities already in the data: {sorted(clash)}")

    subsets = draw_train_subsets(spec)
    extra_test: list[Sample] = []
    for e_idx, ent in enumerate(spec.entities):
        for task in spec.task_pool:
            rng = np.random.default_rng([spec.seed, 2, e_idx, task])
            extra_test.extend(_make_cell(base_test_by_task[task], ent, task, spec, rng))
    # stories of held-out cells must never be trained on
    held_out = frozenset(s.key() for s in extra_test if s.task_id not in subsets[s.entity])
    extra_train: list[Sample] = []
    for e_idx, ent in enumerate(spec.entities):
        for task in subsets[ent]:
            rng = np.random.default_rng([spec.seed, 3, e_idx, task])
            extra_train.extend(_make_cell(base_train_by_task[task], ent, task, spec, rng,
                                          held_out))
    return extra_train, extra_test
