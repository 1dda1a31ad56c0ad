import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from strucgrad.data import (FormatError, MLCDataset, SynthSpec, cooccurrence, format_mlc,
                            gen_synth, load_conll, load_mlc, parse_conll, parse_mlc, save_mlc,
                            split)
from strucgrad.models import UNK_ID


# sparse multi-label format

def test_single_record_parse():
    # header is "N d L": one example, four features, three labels
    ds = parse_mlc("1 4 3\n0,2 1:0.5 3:1.0\n")
    assert len(ds) == 1 and (ds.n_features, ds.n_labels) == (4, 3)
    ex = ds.examples[0]
    assert ex.labels.tolist() == [1.0, 0.0, 1.0]
    assert ex.indices.tolist() == [1, 3] and ex.values.tolist() == [0.5, 1.0]
    assert ds.X.tolist() == [[0.0, 0.5, 0.0, 1.0]]


def test_empty_label_field_gives_zero_labels():
    ds = parse_mlc("2 3 2\n 0:1.5\n1 2:2.0\n")
    assert ds.Y.tolist() == [[0.0, 0.0], [0.0, 1.0]]


@pytest.mark.parametrize("body, message", [
    ("0 1:0.5 1:0.7", "duplicate feature"),
    ("0 2:0.5 1:0.7", "not increasing"),
    ("3 1:0.5", "label index 3"),
    ("0 7:1.0", "feature index 7"),
    ("0 1:abc", "bad feature"),
    ("x 1:1.0", "bad label"),
    ("0,0 1:1.0", "duplicate label"),
])
def test_malformed_lines_report_line_numbers(body, message):
    with pytest.raises(FormatError, match=message) as info:
        parse_mlc(f"2 4 3\n1 0:1.0\n{body}\n", "f.txt")
    assert "f.txt:3" in str(info.value)


def test_count_mismatch_and_bad_header():
    with pytest.raises(FormatError, match="announces 2"):
        parse_mlc("2 3 2\n0 1:1.0\n")
    with pytest.raises(FormatError, match="header"):
        parse_mlc("2 3\n")
    with pytest.raises(FormatError, match="empty"):
        parse_mlc("")


def test_inconsistent_spec_header_is_rejected():
    # "2 3 4" announces two examples and three features; the record uses feature 3
    with pytest.raises(FormatError):
        parse_mlc("2 3 4\n0,2 1:0.5 3:1.0\n")


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 12), st.integers(0, 2**31))
def test_format_round_trip(d, L, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < 0.6)
    Y = (rng.random((n, L)) < 0.4).astype(float)
    ds = MLCDataset.from_arrays(X, Y)
    again = parse_mlc(format_mlc(ds))
    assert np.array_equal(again.X, ds.X) and np.array_equal(again.Y, ds.Y)


def test_save_and_load(tmp_path):
    ds = MLCDataset.from_arrays(np.array([[0.0, 1.25], [3.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    path = tmp_path / "d.txt"
    save_mlc(ds, path)
    assert path.read_bytes().endswith(b"\n") and b"\r" not in path.read_bytes()
    assert np.array_equal(load_mlc(path).X, ds.X)


# CoNLL

def test_two_token_sentence():
    ds = parse_conll("EU NNP\nrejects VBZ\n\n")
    assert len(ds) == 1 and len(ds.examples[0].tokens) == 2
    assert ds.tagset == {"NNP": 0, "VBZ": 1}


def test_last_sentence_without_blank_line():
    ds = parse_conll("a X\nb Y\n\nc X\nd Y")
    assert [len(e.tokens) for e in ds.examples] == [2, 2]


def test_empty_file_has_no_sentences():
    with pytest.raises(FormatError, match="no sentences"):
        parse_conll("")


def test_column_count_mismatch_reports_location():
    with pytest.raises(FormatError, match="f.conll:2"):
        parse_conll("EU B-ORG NNP\nrejects VBZ\n", "f.conll")


def test_docstart_and_middle_columns():
    ds = parse_conll("-DOCSTART- -X- O\n\nEU NNP B-ORG\nrejects VBZ O\n")
    ex = ds.examples[0]
    assert len(ds) == 1 and ex.extra == (("NNP",), ("VBZ",))
    assert set(ds.tagset) == {"B-ORG", "O"}


def test_vocabulary_is_first_seen_and_frozen_vocab_maps_unknowns(tmp_path):
    train = parse_conll("the D\ncat N\n\nthe D\ndog N\n")
    assert [train.vocab[w] for w in ("the", "cat", "dog")] == [2, 3, 4]
    path = tmp_path / "test.conll"
    path.write_text("the D\nzebra N\n", encoding="utf-8")
    test = load_conll(path, train.vocab, train.tagset)
    assert test.examples[0].tokens.tolist() == [2, UNK_ID]
    with pytest.raises(FormatError, match="unknown tag"):
        parse_conll("the Q\n", vocab=train.vocab, tagset=train.tagset)


# synthetic generator

def test_synth_is_seed_deterministic():
    a = gen_synth(SynthSpec.planted(4, 3, 50, seed=3))
    b = gen_synth(SynthSpec.planted(4, 3, 50, seed=3))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(2, 2, 5, np.array([[0.0, 1.0], [0.5, 0.0]]), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        SynthSpec(2, 2, 5, np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        SynthSpec.planted(0, 2, 5)


def _with_coupling(strength, seed=0):
    spec = SynthSpec.planted(4, 6, 2000, seed=seed, strength=strength)
    return gen_synth(spec)


def test_no_coupling_gives_no_cooccurrence_excess():
    ds = _with_coupling(0.0)
    Y = ds.Y
    p = Y.mean(axis=0)
    excess = Y.T @ Y / len(Y) - np.outer(p, p)
    feature_only = excess[0, 1]
    # labels remain dependent only through shared features; the excess stays small
    assert abs(feature_only) < 0.05


def test_planted_pair_raises_cooccurrence():
    coupled = cooccurrence(_with_coupling(2.0))
    free = cooccurrence(_with_coupling(0.0))
    assert coupled[0, 1] > free[0, 1] and coupled[2, 3] > free[2, 3]


def test_balanced_intercept_keeps_labels_near_half():
    Y = _with_coupling(2.0).Y
    assert np.all(np.abs(Y.mean(axis=0) - 0.5) < 0.1)


# split

def test_split_fractions():
    ds = gen_synth(SynthSpec.planted(2, 2, 10))
    tr, va, te = split(ds, (1.0, 0.0, 0.0))
    assert (len(tr), len(va), len(te)) == (10, 0, 0)
    tr, va, te = split(ds, (0.8, 0.1, 0.1), seed=4)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)


def test_split_is_disjoint_covering_and_seeded():
    ds = MLCDataset.from_arrays(np.arange(30.0)[:, None] + 1, np.zeros((30, 1)))
    parts = split(ds, (0.5, 0.2, 0.3), seed=2)
    ids = [p.X[:, 0].tolist() for p in parts]
    flat = sum(ids, [])
    assert sorted(flat) == list(np.arange(30.0) + 1)
    again = split(ds, (0.5, 0.2, 0.3), seed=2)
    assert [p.X[:, 0].tolist() for p in again] == ids


def test_split_rejects_oversubscription():
    ds = gen_synth(SynthSpec.planted(2, 2, 10))
    with pytest.raises(ValueError):
        split(ds, (0.8, 0.2, 0.2))


# co-occurrence

def test_cooccurrence_examples():
    one = MLCDataset.from_arrays(np.zeros((1, 1)), np.array([[1.0, 1.0, 0.0]]))
    assert cooccurrence(one).tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 0]]
    apart = MLCDataset.from_arrays(np.zeros((2, 1)), np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert cooccurrence(apart)[0, 1] == 0


@given(st.integers(0, 2**31))
def test_cooccurrence_is_symmetric_with_zero_diagonal(seed):
    rng = np.random.default_rng(seed)
    Y = (rng.random((15, 5)) < 0.5).astype(float)
    C = cooccurrence(MLCDataset.from_arrays(np.zeros((15, 1)), Y))
    assert np.array_equal(C, C.T) and not np.diag(C).any()
