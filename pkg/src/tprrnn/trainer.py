"""Training loop, evaluation and run presets."""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from . import data_babi as db
from .encoder import Vocabulary
from .model import AblationConfig, ModelConfig, ModelParams, batch_loss, init_params
from .optimizer import (PRESETS, NadamState, NanAction, NonFiniteGradientError, Schedule,
                        nadam_step, nan_policy)
from .tensor_core import NonFiniteError

log = logging.getLogger(__name__)

DATA_ENV = "TPRRNN_DATA"
ALL_TASKS = tuple(range(1, 21))
FAILURE_THRESHOLD = 5.0


class TrainingDivergedError(RuntimeError):
    """Non-finite values after warm-up."""


class VocabMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "single"                 # "single" | "all" | "systematic"
    task: int | None = 1
    data_dir: str | None = None
    out_dir: str = "runs/default"
    dim_hidden: int | None = None        # None: preset (vocab size / 90)
    dim_entity: int | None = None
    dim_relation: int | None = None
    lr: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    batch_size: int | None = None
    max_steps: int = 50_000
    eval_every: int = 1000
    patience: int = 20
    seed: int = 0
    ablation: str = "wmb"
    warmup_steps: int = 50
    max_seconds: float | None = None
    eval_batch_size: int = 256
    augment_seed: int = 0
    fused: bool = True

    def preset_name(self) -> str:
        return "all-tasks" if self.mode == "all" else "single-task"

    def resolved(self, vocab_size: int) -> "TrainConfig":
        """Fill unset dimensions and optimiser settings from the preset."""
        preset = PRESETS[self.preset_name()]
        if self.mode == "all":
            dims = dict(dim_hidden=90, dim_entity=40, dim_relation=20)
        else:
            dims = dict(dim_hidden=vocab_size, dim_entity=15, dim_relation=10)
        fill = dict(lr=preset.lr, beta1=preset.beta1, beta2=preset.beta2,
                    batch_size=preset.batch_size, **dims)
        return dataclasses.replace(
            self, **{k: v for k, v in fill.items() if getattr(self, k) is None})

    def tasks(self) -> tuple[int, ...]:
        if self.mode == "single":
            return (int(self.task),)
        if self.mode == "all":
            return ALL_TASKS
        if self.mode == "systematic":
            return db.AugmentSpec().task_pool
        raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class Dataset:
    train: list[db.Sample]
    valid: list[db.Sample]
    test: list[db.Sample]
    extra_test: list[db.Sample] = field(default_factory=list)


def resolve_data_dir(data_dir: str | None) -> Path:
    d = data_dir or os.environ.get(DATA_ENV)
    if not d:
        raise db.DatasetMissingError(
            f"no bAbI data directory given (use --data or set {DATA_ENV})")
    return Path(d)


def load_dataset(config: TrainConfig) -> Dataset:
    data_dir = resolve_data_dir(config.data_dir)
    splits = {name: {t: db.load_task(data_dir, t, name) for t in config.tasks()}
              for name in ("train", "valid", "test")}
    ds = Dataset(*(
        [s for t in config.tasks() for s in splits[name][t]]
        for name in ("train", "valid", "test")))
    if config.mode == "systematic":
        spec = db.AugmentSpec(seed=config.augment_seed)
        extra_train, extra_test = db.augment_systematic(splits["train"], spec, splits["test"])
        ds.train.extend(extra_train)
        ds.extra_test = extra_test
    return ds


# evaluation ----------------------------------------------------------------

@dataclass
class EvalResult:
    loss: float
    error: float                                  # percent
    per_task: dict[int, float] = field(default_factory=dict)
    per_cell: dict[tuple[str, int], float] = field(default_factory=dict)  # accuracy %
    predictions: np.ndarray | None = None

    @property
    def failures(self) -> int:
        return sum(1 for e in self.per_task.values() if e > FAILURE_THRESHOLD)


def evaluate(params: ModelParams, samples: Sequence[db.EncodedSample],
             ablation: AblationConfig = AblationConfig(), batch_size: int = 256,
             fused: bool = True) -> EvalResult:
    """Mean cross-entropy and argmax error (percent) over ``samples``."""
    if not samples:
        raise ValueError("nothing to evaluate")
    total_loss = 0.0
    preds = []
    with np.errstate(over="ignore", invalid="ignore"):
        for batch in db.iterate_batches(samples, batch_size):
            _, _, loss, logits = batch_loss(params, batch, ablation, requires_grad=False,
                                            fused=fused)
            total_loss += float(loss.value) * len(batch)
            preds.append(np.argmax(logits.value, axis=-1))
    pred = np.concatenate(preds)
    gold = np.array([s.answer for s in samples])
    wrong = pred != gold
    per_task: dict[int, list] = defaultdict(list)
    per_cell: dict[tuple, list] = defaultdict(list)
    for s, w in zip(samples, wrong):
        per_task[s.task_id].append(w)
        if s.entity is not None:
            per_cell[(s.entity, s.task_id)].append(w)
    return EvalResult(
        loss=total_loss / len(samples),
        error=100.0 * float(wrong.mean()),
        per_task={t: 100.0 * float(np.mean(v)) for t, v in sorted(per_task.items())},
        per_cell={c: 100.0 * (1.0 - float(np.mean(v))) for c, v in sorted(per_cell.items())},
        predictions=pred,
    )


def check_vocab(samples: Sequence[db.Sample], vocab: Vocabulary, k: int) -> None:
    for s in samples:
        for sent in (*s.story, s.question):
            unknown = [t for t in sent if t not in vocab]
            if unknown:
                raise VocabMismatchError(f"tokens not in checkpoint vocabulary: {unknown}")
            if len(sent) > k:
                raise VocabMismatchError(f"sentence longer than k={k}: {' '.join(sent)}")
        if s.answer not in vocab:
            raise VocabMismatchError(f"answer {s.answer!r} not in checkpoint vocabulary")


# metrics -------------------------------------------------------------------

@dataclass
class EvalRecord:
    step: int
    train_loss: float
    val_loss: float
    val_error: float
    lr: float
    reinit_count: int
    per_task_error: dict[int, float] = field(default_factory=dict)


@dataclass
class RunMetrics:
    records: list[EvalRecord] = field(default_factory=list)
    loss_trace: list[float] = field(default_factory=list)
    lr_trace: list[float] = field(default_factory=list)
    reinit_count: int = 0
    best_step: int = 0
    best_val_error: float = float("inf")
    best_val_loss: float = float("inf")
    test_error: float | None = None
    test_per_task: dict[int, float] = field(default_factory=dict)
    test_failures: int | None = None
    systematic_grid: dict[tuple[str, int], float] = field(default_factory=dict)
    steps: int = 0
    seconds: float = 0.0
    seed: int = 0

    def write_csv(self, path) -> None:
        tasks = sorted({t for r in self.records for t in r.per_task_error})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_loss", "val_loss", "val_error", "lr", "reinit_count"]
                       + [f"task{t}_error" for t in tasks])
            for r in self.records:
                w.writerow([r.step, repr(r.train_loss), repr(r.val_loss), repr(r.val_error),
                            repr(r.lr), r.reinit_count]
                           + [repr(r.per_task_error.get(t, float("nan"))) for t in tasks])

    def write_grid(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entity", "task", "accuracy"])
            for (ent, task), acc in sorted(self.systematic_grid.items()):
                w.writerow([ent, task, repr(acc)])

    def summary(self) -> str:
        parts = [f"steps={self.steps}", f"best_step={self.best_step}",
                 f"best_val_error={self.best_val_error:.2f}",
                 f"reinits={self.reinit_count}"]
        if self.test_error is not None:
            parts.append(f"test_error={self.test_error:.2f}")
        if self.test_failures is not None and len(self.test_per_task) > 1:
            parts.append(f"failures(>5%)={self.test_failures}")
        parts.append(f"seconds={self.seconds:.0f}")
        return "summary " + " ".join(parts)


# training ------------------------------------------------------------------

def _config_blob(cfg: TrainConfig, model_cfg: ModelConfig) -> dict:
    return {"model": dataclasses.asdict(model_cfg), "train": dataclasses.asdict(cfg)}


def _finite(params: ModelParams) -> bool:
    return all(np.isfinite(v).all() for v in params.arrays.values())


def train(config: TrainConfig, dataset: Dataset | None = None,
          save_checkpoints: bool = True):
    """Run one training job; returns ``(RunMetrics, best ModelParams, Vocabulary)``.

    The best-validation checkpoint is written to ``out_dir/best.ckpt`` and
    the per-eval metrics to ``out_dir/metrics.csv``.
    """
    t0 = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config)
    vocab, k = db.build_vocab(dataset.train + dataset.valid + dataset.test
                              + dataset.extra_test)
    cfg = config.resolved(len(vocab))
    model_cfg = ModelConfig(len(vocab), len(vocab), cfg.dim_hidden, cfg.dim_entity,
                            cfg.dim_relation, k)
    ablation = AblationConfig.parse(cfg.ablation)
    train_set = db.encode_samples(dataset.train, vocab, k)
    valid_set = db.encode_samples(dataset.valid, vocab, k)
    test_set = db.encode_samples(dataset.test, vocab, k)
    out_dir = Path(cfg.out_dir)
    if save_checkpoints:
        out_dir.mkdir(parents=True, exist_ok=True)
    blob = _config_blob(cfg, model_cfg)

    metrics = RunMetrics()
    seed = cfg.seed
    while True:
        try:
            best = _train_attempt(cfg, model_cfg, ablation, seed, train_set, valid_set,
                                  metrics, vocab, blob, out_dir if save_checkpoints else None,
                                  t0)
            break
        except _Restart:
            seed += 1
            metrics.reinit_count += 1
            log.warning("non-finite values during warm-up; reinitialising with seed %d", seed)
    metrics.seed = seed
    metrics.seconds = time.perf_counter() - t0

    test = evaluate(best, test_set, ablation, cfg.eval_batch_size, cfg.fused)
    metrics.test_error = test.error
    metrics.test_per_task = test.per_task
    metrics.test_failures = test.failures
    if dataset.extra_test:
        extra = evaluate(best, db.encode_samples(dataset.extra_test, vocab, k), ablation,
                         cfg.eval_batch_size, cfg.fused)
        metrics.systematic_grid = extra.per_cell
    if save_checkpoints:
        metrics.write_csv(out_dir / "metrics.csv")
        if metrics.systematic_grid:
            metrics.write_grid(out_dir / "systematic_grid.csv")
    log.info(metrics.summary())
    return metrics, best, vocab


class _Restart(Exception):
    pass


def _train_attempt(cfg, model_cfg, ablation, seed, train_set, valid_set, metrics,
                   vocab, blob, out_dir, t0) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = init_params(model_cfg, rng)
    stream = db.make_batches(train_set, cfg.batch_size, np.random.default_rng([seed, 1]))
    state = NadamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    schedule = Schedule(cfg.lr, warmup_steps=cfg.warmup_steps)
    metrics.records.clear()
    metrics.loss_trace.clear()
    metrics.lr_trace.clear()
    best = params.copy()
    best_key = (float("inf"), float("inf"))
    stale = 0
    window = []

    for step in range(1, cfg.max_steps + 1):
        batch = next(stream)
        lr = schedule.lr(step)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                tape, vs, loss, _ = batch_loss(params, batch, ablation, fused=cfg.fused)
                if not np.isfinite(loss.value):
                    raise NonFiniteError("loss is not finite")
                tape.backward(loss)
                grads = {name: v.grad for name, v in vs.items()}
                nadam_step(params.arrays, grads, state, lr=lr)
                if not _finite(params):
                    raise NonFiniteError("parameters are not finite after the update")
        except (NonFiniteError, NonFiniteGradientError, FloatingPointError) as exc:
            if nan_policy(step, cfg.warmup_steps) is NanAction.REINITIALIZE:
                raise _Restart() from exc
            if out_dir is not None:
                checkpoint.save(params, vocab, blob, out_dir / "diverged.ckpt")
            raise TrainingDivergedError(
                f"non-finite values at step {step} after warm-up: {exc}") from exc
        value = float(loss.value)
        metrics.loss_trace.append(value)
        metrics.lr_trace.append(lr)
        window.append(value)
        metrics.steps = step

        out_of_time = cfg.max_seconds is not None and time.perf_counter() - t0 > cfg.max_seconds
        if step % cfg.eval_every == 0 or step == cfg.max_steps or out_of_time:
            val = evaluate(params, valid_set, ablation, cfg.eval_batch_size, cfg.fused)
            schedule.observe_val_loss(val.loss)
            metrics.records.append(EvalRecord(step, float(np.mean(window)), val.loss,
                                              val.error, lr, metrics.reinit_count,
                                              val.per_task))
            window = []
            log.info("step %d train_loss %.4f val_loss %.4f val_error %.2f%% lr %.5g",
                     step, metrics.records[-1].train_loss, val.loss, val.error, lr)
            key = (val.error, val.loss)
            if key < best_key:
                best_key = key
                best = params.copy()
                metrics.best_step = step
                metrics.best_val_error, metrics.best_val_loss = key
                stale = 0
                if out_dir is not None:
                    checkpoint.save(best, vocab, blob, out_dir / "best.ckpt")
            else:
                stale += 1
            if stale >= cfg.patience or out_of_time:
                break
    return best
