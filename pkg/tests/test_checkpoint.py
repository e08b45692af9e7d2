import json

import numpy as np
import pytest

from tprrnn import checkpoint
from tprrnn import data_babi as db
from tprrnn.encoder import Vocabulary
from tprrnn.model import ModelConfig, init_params
from tprrnn.trainer import evaluate

CFG = ModelConfig(vocab_size=8, dim_symbol=6, dim_hidden=5, dim_entity=4, dim_relation=3, k=4)


def _ckpt(seed=0):
    params = init_params(CFG, np.random.default_rng(seed))
    params.arrays["ln2.gamma"] = np.array(1.25)
    vocab = Vocabulary(["a", "b", "c", "d", ".", "?", "é"])
    return params, vocab, {"model": {**CFG.__dict__}, "train": {"seed": seed}}


def test_save_load_save_identical(tmp_path):
    p, v, c = _ckpt()
    checkpoint.save(p, v, c, tmp_path / "a.ckpt")
    p2, v2, c2 = checkpoint.load(tmp_path / "a.ckpt")
    checkpoint.save(p2, v2, c2, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert v2 == v and c2 == c
    for name, arr in p.items():
        assert p2[name].shape == arr.shape and np.array_equal(p2[name], arr)


def test_layout_header():
    p, v, c = _ckpt()
    data = checkpoint.dumps(p, v, c)
    assert data[:8] == b"TPRRNN1\x00"
    assert int.from_bytes(data[8:12], "little") == len(p.arrays)
    blob = json.dumps(c, sort_keys=True).encode()
    assert data.endswith(len(blob).to_bytes(4, "little") + blob)


def test_bad_magic():
    data = bytearray(checkpoint.dumps(*_ckpt()))
    data[0] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointFormatError, match="magic"):
        checkpoint.loads(bytes(data))


@pytest.mark.parametrize("cut", [4, 20, 200, -3])
def test_truncated(cut):
    data = checkpoint.dumps(*_ckpt())
    with pytest.raises(checkpoint.CheckpointFormatError):
        checkpoint.loads(data[:cut])


def test_trailing_bytes():
    with pytest.raises(checkpoint.CheckpointFormatError):
        checkpoint.loads(checkpoint.dumps(*_ckpt()) + b"\0")


def test_shape_mismatch():
    p, v, c = _ckpt()
    c["model"]["dim_entity"] = 5
    with pytest.raises(checkpoint.CheckpointFormatError):
        checkpoint.loads(checkpoint.dumps(p, v, c))


def test_reloaded_validation_loss_identical(tmp_path):
    p, v, c = _ckpt(3)
    samples = db.parse_lines(["1 a b c.", "2 d a?\tb\t1", "1 c.", "2 b?\td\t1"])
    enc = db.encode_samples(samples, v, CFG.k)
    checkpoint.save(p, v, c, tmp_path / "m.ckpt")
    p2, _, _ = checkpoint.load(tmp_path / "m.ckpt")
    assert evaluate(p, enc).loss == evaluate(p2, enc).loss
