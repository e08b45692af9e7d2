import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tprrnn import data_babi as db
from tprrnn import synthetic
from tprrnn.encoder import PAD_ID


def test_two_line_story():
    s = db.parse_lines(["1 Mary went to the kitchen.", "2 Where is Mary?\tkitchen\t1"])
    assert len(s) == 1
    assert s[0].story == [["mary", "went", "to", "the", "kitchen", "."]]
    assert s[0].question == ["where", "is", "mary", "?"]
    assert s[0].answer == "kitchen"


def test_id_reset_starts_new_story():
    lines = ["1 a b.", "2 c d.", "3 q?\tx\t1", "4 e f.", "5 q?\ty\t4",
             "1 g h.", "2 q?\tz\t1"]
    s = db.parse_lines(lines)
    assert [len(x.story) for x in s] == [2, 3, 1]
    assert s[2].story == [["g", "h", "."]]


def test_questions_not_in_story():
    s = db.parse_lines(["1 a.", "2 q?\tx\t1", "3 b.", "4 r?\ty\t3"])
    assert s[1].story == [["a", "."], ["b", "."]]


def test_empty_file(tmp_path):
    p = tmp_path / "qa3_train.txt"
    p.write_text("")
    assert db.parse_task_file(p) == []


def test_multiword_answer_single_token():
    s = db.parse_lines(["1 The kitchen is north of the hallway.",
                        "2 How do you go from the den to the kitchen?\tn,w\t1"])
    vocab, _ = db.build_vocab(s)
    assert "n,w" in vocab and "n" not in vocab


@pytest.mark.parametrize("line", ["Mary went.", "x Mary went.", "1 Where is Mary?",
                                  "1 Where is Mary?\t\t1"])
def test_malformed(line):
    with pytest.raises(db.BabiFormatError):
        db.parse_lines([line])


def test_find_task_file(tmp_path):
    (tmp_path / "qa12_conjunction_valid.txt").write_text("1 a.\n2 b?\tc\t1\n")
    assert db.find_task_file(tmp_path, 12, "valid").name == "qa12_conjunction_valid.txt"
    assert db.load_task(tmp_path, 12, "valid")[0].task_id == 12
    with pytest.raises(db.DatasetMissingError):
        db.find_task_file(tmp_path, 1, "train")
    with pytest.raises(db.DatasetMissingError):
        db.find_task_file(tmp_path / "nope", 1, "train")


def test_task1_vocabulary(synthetic_dir):
    vocab, k = db.build_vocab(db.load_task(synthetic_dir, 1, "train"))
    tokens = vocab.id_to_token[1:]
    assert 15 <= len(tokens) <= 25
    assert all(t == t.lower() for t in tokens)
    assert vocab.id_to_token[0] == "<pad>" and tokens == sorted(tokens)
    assert k == 7   # "mary went back to the kitchen ."


@given(st.integers(0, 10_000))
def test_round_trip(seed):
    lines = synthetic.generate_lines(1, 2, seed)
    samples = db.parse_lines(lines, 1)
    assert [s.key() for s in db.parse_lines(db.format_samples(samples), 1)] == [
        s.key() for s in samples]
    for raw, s in zip([x for x in lines if "\t" in x], samples):
        assert db.tokenize(raw.split("\t")[0].split(" ", 1)[1]) == s.question


def _encoded():
    samples = db.parse_lines(["1 a b.", "2 c.", "3 d e f.", "4 q?\tx\t1",
                              "1 a.", "2 q?\ty\t1"])
    vocab, k = db.build_vocab(samples)
    return db.encode_samples(samples, vocab, k), vocab, k


def test_collate_pads_and_masks():
    enc, vocab, k = _encoded()
    long_, short = enc
    b = db.collate([short, long_, short])
    assert b.story.shape == (3, 3, k)
    assert b.mask.tolist() == [[1, 0, 0], [1, 1, 1], [1, 0, 0]]
    assert (b.story[0, 1:] == PAD_ID).all()
    assert vocab.token(int(b.answer[1])) == "x"


def test_make_batches_deterministic():
    enc, _, _ = _encoded()
    enc = enc * 5
    a = db.make_batches(enc, 3, np.random.default_rng(4))
    c = db.make_batches(enc, 3, np.random.default_rng(4))
    for _ in range(8):
        x, y = next(a), next(c)
        assert np.array_equal(x.story, y.story) and np.array_equal(x.answer, y.answer)


def test_iterate_batches_covers_all():
    enc, _, _ = _encoded()
    assert sum(len(b) for b in db.iterate_batches(enc * 3, 4)) == 6


# augmentation -------------------------------------------------------------

@pytest.fixture(scope="module")
def pools():
    spec = db.AugmentSpec()
    train = {t: db.parse_lines(synthetic.generate_lines(t, 60, 1), t) for t in spec.task_pool}
    test = {t: db.parse_lines(synthetic.generate_lines(t, 60, 2), t) for t in spec.task_pool}
    return spec, train, test


@pytest.fixture(scope="module")
def augmented(pools):
    spec, train, test = pools
    return db.augment_systematic(train, spec, test)


def test_cells_and_sizes(pools, augmented):
    spec, _, _ = pools
    extra_train, extra_test = augmented
    cells = {}
    for s in extra_test:
        cells.setdefault((s.entity, s.task_id), []).append(s)
    assert len(cells) == 40 and len(extra_test) == 20_000
    assert all(len(v) == 500 for v in cells.values())
    for (ent, _), v in cells.items():
        assert sum(ent in s.question for s in v) == 100


def test_train_subsets(pools, augmented):
    spec, _, _ = pools
    extra_train, _ = augmented
    subsets = db.draw_train_subsets(spec)
    assert [len(subsets[e]) for e in spec.entities] == [8, 6, 4, 2, 1]
    seen = {}
    for s in extra_train:
        seen.setdefault(s.entity, set()).add(s.task_id)
    assert {e: tuple(sorted(t)) for e, t in seen.items()} == subsets
    assert len(seen["logan"]) == 1


def test_held_out_cells_disjoint(pools, augmented):
    spec, _, _ = pools
    extra_train, extra_test = augmented
    subsets = db.draw_train_subsets(spec)
    held = {s.key() for s in extra_test if s.task_id not in subsets[s.entity]}
    assert held and not held & {s.key() for s in extra_train}


def test_rewrite_is_consistent(augmented):
    _, extra_test = augmented
    for s in extra_test[:2000]:
        tokens = {t for sent in s.story for t in sent} | set(s.question)
        assert s.entity in tokens
        if "where" in s.question and s.entity in s.question:
            assert s.answer in synthetic.LOCATIONS


def test_entity_collision(pools):
    spec, train, test = pools
    bad = dict(train)
    bad[1] = [db.Sample([["alex", "went", "home", "."]], ["where", "is", "alex", "?"], "home", 1)]
    with pytest.raises(db.EntityCollisionError):
        db.augment_systematic(bad, spec, test)


def test_augment_deterministic(pools, augmented):
    spec, train, test = pools
    again = db.augment_systematic(train, spec, test)
    assert [s.key() for s in again[0]] == [s.key() for s in augmented[0]]
