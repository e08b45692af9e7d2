import csv

import numpy as np
import pytest

from tprrnn import checkpoint, trainer
from tprrnn import data_babi as db
from tprrnn.model import ModelConfig, init_params
from tprrnn.optimizer import NonFiniteGradientError
from tprrnn.trainer import EvalResult, TrainConfig, evaluate, train

SMALL = dict(batch_size=32, dim_hidden=16, dim_entity=6, dim_relation=4)


def _cfg(synthetic_dir, tmp_path, **kw):
    base = dict(task=1, data_dir=str(synthetic_dir), out_dir=str(tmp_path / "run"),
                max_steps=10, eval_every=5, **SMALL)
    base.update(kw)
    return TrainConfig(**base)


def test_preset_dims():
    single = TrainConfig().resolved(vocab_size=21)
    assert (single.dim_hidden, single.dim_entity, single.dim_relation) == (21, 15, 10)
    assert (single.lr, single.beta1, single.beta2, single.batch_size) == (0.008, 0.6, 0.4, 128)
    joint = TrainConfig(mode="all", task=None).resolved(vocab_size=180)
    assert (joint.dim_hidden, joint.dim_entity, joint.dim_relation) == (90, 40, 20)
    assert (joint.lr, joint.batch_size) == (0.001, 32)
    assert TrainConfig(mode="systematic").tasks() == (1, 6, 7, 8, 9, 11, 12, 13)


def test_missing_data(monkeypatch):
    monkeypatch.delenv(trainer.DATA_ENV, raising=False)
    with pytest.raises(db.DatasetMissingError):
        train(TrainConfig(task=1))


def test_deterministic_loss_trace(synthetic_dir, tmp_path):
    a, _, _ = train(_cfg(synthetic_dir, tmp_path), save_checkpoints=False)
    b, _, _ = train(_cfg(synthetic_dir, tmp_path), save_checkpoints=False)
    assert len(a.loss_trace) == 10 and a.loss_trace == b.loss_trace
    c, _, _ = train(_cfg(synthetic_dir, tmp_path, seed=1), save_checkpoints=False)
    assert c.loss_trace != a.loss_trace


def test_lr_trace_and_outputs(synthetic_dir, tmp_path):
    m, best, vocab = train(_cfg(synthetic_dir, tmp_path, max_steps=60, eval_every=20,
                                warmup_steps=50))
    assert m.lr_trace == [0.0008] * 50 + [0.008] * 10
    assert m.reinit_count == 0
    out = tmp_path / "run"
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert [int(r["step"]) for r in rows] == [20, 40, 60]
    p, v, cfg = checkpoint.load(out / "best.ckpt")
    assert v == vocab and cfg["train"]["task"] == 1
    for name, arr in best.items():
        assert np.array_equal(p[name], arr)
    assert m.best_val_error == min(r.val_error for r in m.records)


def test_nan_in_warmup_reinitialises(synthetic_dir, tmp_path, monkeypatch):
    real = trainer.nadam_step
    calls = {"n": 0}

    def flaky(params, grads, state, lr=None):
        calls["n"] += 1
        if calls["n"] == 7:
            raise NonFiniteGradientError("injected")
        return real(params, grads, state, lr)

    monkeypatch.setattr(trainer, "nadam_step", flaky)
    m, _, _ = train(_cfg(synthetic_dir, tmp_path, seed=7), save_checkpoints=False)
    assert m.reinit_count == 1 and m.seed == 8 and len(m.loss_trace) == 10


def test_nan_after_warmup_aborts(synthetic_dir, tmp_path, monkeypatch):
    real = trainer.nadam_step

    def late(params, grads, state, lr=None):
        if state.step_count == 54:
            raise NonFiniteGradientError("injected")
        return real(params, grads, state, lr)

    monkeypatch.setattr(trainer, "nadam_step", late)
    with pytest.raises(trainer.TrainingDivergedError, match="step 55"):
        train(_cfg(synthetic_dir, tmp_path, max_steps=100))
    assert (tmp_path / "run" / "diverged.ckpt").exists()


def test_patience_stops_early(synthetic_dir, tmp_path, monkeypatch):
    results = iter([0.5, 0.3, 0.4, 0.4, 0.4, 0.1])

    def fake_eval(params, samples, *a, **kw):
        return EvalResult(loss=1.0, error=100 * next(results, 0.4))

    monkeypatch.setattr(trainer, "evaluate", fake_eval)
    m, _, _ = train(_cfg(synthetic_dir, tmp_path, max_steps=100, eval_every=2, patience=3),
                    save_checkpoints=False)
    assert m.steps == 10 and m.best_step == 4 and m.best_val_error == 30.0


def _toy_model(vocab_size=9):
    cfg = ModelConfig(vocab_size, vocab_size, 5, 4, 3, 3)
    return init_params(cfg, np.random.default_rng(0))


def _samples(n, vocab_size, seed):
    rng = np.random.default_rng(seed)
    return [db.EncodedSample(rng.integers(1, vocab_size, size=(2, 3)),
                             rng.integers(1, vocab_size, size=3),
                             int(rng.integers(1, vocab_size)), task_id=1 + i % 2)
            for i in range(n)]


def test_evaluate_perfect_predictor():
    params = _toy_model()
    samples = _samples(40, 9, 1)
    preds = evaluate(params, samples).predictions
    for s, p in zip(samples, preds):
        s.answer = int(p)
    res = evaluate(params, samples)
    assert res.error == 0.0 and res.per_task == {1: 0.0, 2: 0.0} and res.failures == 0


def test_evaluate_random_predictor(monkeypatch):
    V = 9
    rng = np.random.default_rng(3)

    def random_logits(params, batch, *a, **kw):
        logits = rng.normal(size=(len(batch), V))
        return None, None, type("L", (), {"value": 1.0})(), type("L", (), {"value": logits})()

    monkeypatch.setattr(trainer, "batch_loss", random_logits)
    res = evaluate(_toy_model(V), _samples(4000, V, 2))
    assert res.error == pytest.approx(100 * (1 - 1 / V), abs=2.0)


def test_failure_count():
    res = EvalResult(0.0, 0.0, per_task={1: 0.0, 2: 5.0, 3: 5.1, 4: 40.0})
    assert res.failures == 2


def test_vocab_mismatch():
    vocab, k = db.build_vocab(db.parse_lines(["1 a.", "2 b?\tc\t1"]))
    with pytest.raises(trainer.VocabMismatchError):
        trainer.check_vocab(db.parse_lines(["1 zz.", "2 b?\tc\t1"]), vocab, k)


@pytest.mark.parametrize("task", [1, 20])
def test_synthetic_proxy_training(synthetic_dir, tmp_path, task):
    """Clearly a proxy: synthetic stories in the bAbI grammar, not the released data."""
    m, _, _ = train(TrainConfig(task=task, data_dir=str(synthetic_dir), max_steps=800,
                                eval_every=50, patience=3, batch_size=32, dim_hidden=24,
                                seed=0), save_checkpoints=False)
    assert m.test_error <= (5.0 if task == 1 else 1.0)
    assert m.reinit_count == 0
