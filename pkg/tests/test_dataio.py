import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aurl.dataio import (ClassVocabulary, FeatureSet, SynthBenchConfig, export_projection, fmt,
                         read_benchmark, read_features, read_vocab, synth_benchmark, write_benchmark,
                         write_features, write_vocab)
from aurl.errors import BadHeader, BadRow, DimMismatch, DuplicateId, NotThreeDim, ValidationError
from aurl.zeroshot import FilterConfig, filter_train_classes


def _random_doubles(rng, n):
    """Doubles spread over many magnitudes, including awkward decimals like 0.1."""
    x = rng.standard_normal(n) * 10.0 ** rng.integers(-300, 300, size=n)
    x[:4] = [0.1, -0.0, 1 / 3, 5e-324]
    return x


def test_fmt_round_trips_1000_doubles(rng):
    x = _random_doubles(rng, 1000)
    back = np.array([float(fmt(v)) for v in x])
    np.testing.assert_array_equal(back.view(np.uint64), x.view(np.uint64))


def test_features_round_trip_bit_exact(tmp_path, rng):
    X = _random_doubles(rng, 1000).reshape(250, 4)
    fs = FeatureSet(rng.integers(0, 50, size=250), np.arange(250), X)
    write_features(tmp_path / "a.fvec", fs)
    back = read_features(tmp_path / "a.fvec")
    assert back == fs
    np.testing.assert_array_equal(back.features.view(np.uint64), X.view(np.uint64))
    assert (tmp_path / "a.fvec").read_text().splitlines()[0] == "fvec 1 4 250"


def test_features_small_round_trip(tmp_path):
    fs = FeatureSet(np.array([0, 1, 1]), np.array([0, 0, 1]), np.array([[0.1, 2.0], [-3.5, 1e-7], [0, 1]]))
    write_features(tmp_path / "s.fvec", fs)
    assert read_features(tmp_path / "s.fvec") == fs
    assert (tmp_path / "s.fvec").read_text().splitlines()[1] == "0 0 0.10000000000000001 2"


@pytest.mark.parametrize("text, err", [
    ("", BadHeader),
    ("fvec 2 2 1\n0 0 1 2\n", BadHeader),
    ("fvec 1 2 x\n", BadHeader),
    ("fvec 1 2 2\n0 0 1 2\n", BadRow),
    ("fvec 1 2 1\n0 0 1 zz\n", BadRow),
    ("fvec 1 2 1\n0 0 1 nan\n", BadRow),
    ("fvec 1 2 1\n-1 0 1 2\n", BadRow),
    ("fvec 1 2 1\n0 0 1 2 3\n", DimMismatch),
])
def test_features_reject_malformed(tmp_path, text, err):
    p = tmp_path / "bad.fvec"
    p.write_text(text)
    with pytest.raises(err):
        read_features(p)


def test_features_error_carries_line_number(tmp_path):
    p = tmp_path / "bad.fvec"
    p.write_text("fvec 1 2 3\n0 0 1 2\n0 1 1 2\n0 2 1 oops\n")
    with pytest.raises(BadRow, match=r"bad\.fvec:4"):
        read_features(p)


def test_vocab_round_trip(tmp_path, rng):
    emb = _random_doubles(rng, 1000).reshape(100, 10)
    v = ClassVocabulary(np.arange(100) * 3, [f"name {i}" for i in range(100)], emb)
    write_vocab(tmp_path / "v.cvoc", v)
    back = read_vocab(tmp_path / "v.cvoc")
    assert back == v
    np.testing.assert_array_equal(back.embeddings.view(np.uint64), emb.view(np.uint64))


def test_vocab_averages_multi_word_names(tmp_path):
    (tmp_path / "v.cvoc").write_text(
        "cvoc 1 2\n"
        "0\tplaying basketball\t1 2 3 6\n"
        "1\tjuggling\t0.5 -1\n"
        "2\tice skating\t4 4\n")
    v = read_vocab(tmp_path / "v.cvoc")
    np.testing.assert_array_equal(v.embeddings, [[2.0, 4.0], [0.5, -1.0], [4.0, 4.0]])
    assert v.names[0] == "playing basketball"


@pytest.mark.parametrize("text, err", [
    ("cvoc 1\n", BadHeader),
    ("cvoc 1 0\n", BadHeader),
    ("cvoc 1 2\n0\ta\t1 2\n0\tb\t3 4\n", DuplicateId),
    ("cvoc 1 2\n0\ta\t1 2 3\n", DimMismatch),
    ("cvoc 1 2\n0 a 1 2\n", BadRow),
])
def test_vocab_reject_malformed(tmp_path, text, err):
    p = tmp_path / "bad.cvoc"
    p.write_text(text)
    with pytest.raises(err):
        read_vocab(p)


def test_vocab_duplicate_reports_both_lines(tmp_path):
    p = tmp_path / "dup.cvoc"
    p.write_text("cvoc 1 1\n4\ta\t1\n5\tb\t1\n4\tc\t1\n")
    with pytest.raises(DuplicateId, match=r"dup\.cvoc:4.*line 2"):
        read_vocab(p)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=12))
def test_feature_values_survive_any_double(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("h") / "x.fvec"
    fs = FeatureSet(np.zeros(1, dtype=int), np.zeros(1, dtype=int), np.array([vals]))
    write_features(p, fs)
    assert read_features(p) == fs


# -- synthetic benchmark -----------------------------------------------------

def test_synth_shapes_and_determinism():
    cfg = SynthBenchConfig(samples_per_class=10, word_dim=20)
    a, b = synth_benchmark(cfg), synth_benchmark(cfg)
    assert a.train == b.train and a.test == b.test
    assert a.train_vocab == b.train_vocab and a.test_vocab == b.test_vocab
    assert a.train.features.shape == (200, 32) and a.test.features.shape == (80, 32)
    assert len(a.train_vocab) == 20 and len(a.test_vocab) == 8
    np.testing.assert_allclose(np.linalg.norm(a.train.features, axis=1), 1, atol=1e-12)
    other = synth_benchmark(SynthBenchConfig(samples_per_class=10, word_dim=20, seed=1))
    assert other.train != a.train


def test_synth_noiseless_limit():
    b = synth_benchmark(SynthBenchConfig(samples_per_class=5, word_dim=8, cluster_spread=1e-300))
    for k in range(20):
        rows = b.train.features[b.train.class_ids == k]
        np.testing.assert_array_equal(rows, np.repeat(rows[:1], 5, axis=0))
    cos = b.train.features[::5] @ b.train.features[::5].T
    assert np.max(cos - np.eye(20)) < 0.95


def test_synth_nuisance_subspace():
    cfg = SynthBenchConfig(samples_per_class=400, word_dim=8, cluster_spread=1e-4, nuisance_dim=5,
                           nuisance_scale=10.0)
    b = synth_benchmark(cfg)
    X, y = b.train.features, b.train.class_ids
    dirs = np.stack([X[y == k].mean(axis=0) for k in range(20)])
    resid = (X - dirs[y]) / cfg.cluster_spread
    evals, evecs = np.linalg.eigh(resid.T @ resid / len(X))
    evals, evecs = evals[::-1], evecs[:, ::-1]
    # five directions carry 100x the variance of the rest
    np.testing.assert_allclose(evals[:5], 100.0, rtol=0.2)
    assert evals[5] < 1.5
    # and they are orthogonal to every class direction, up to eigenvector sampling error
    assert np.max(np.abs(dirs @ evecs[:, :5])) < 1e-2


def test_synth_config_limits():
    with pytest.raises(ValidationError):
        SynthBenchConfig(latent_dim=None)  # the nuisance subspace needs room outside the class subspace
    assert SynthBenchConfig(latent_dim=None, nuisance_dim=0).nuisance_dim == 0
    with pytest.raises(ValidationError):
        SynthBenchConfig(latent_dim=30, nuisance_dim=3)


def test_default_benchmark_passes_filter():
    b = synth_benchmark(SynthBenchConfig())
    res = filter_train_classes(b.train_vocab, b.test_vocab, FilterConfig(0.05))
    assert res.retained == b.train_vocab.ids.tolist() and res.excluded == []


def test_benchmark_files_round_trip(tmp_path):
    b = synth_benchmark(SynthBenchConfig(samples_per_class=3, word_dim=6))
    write_benchmark(tmp_path, b)
    back = read_benchmark(tmp_path)
    assert back.train == b.train and back.test_vocab == b.test_vocab


# -- 3-D export ----------------------------------------------------------------

def test_export_projection(tmp_path, rng):
    V = rng.standard_normal((5, 3))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    S = np.eye(3)[:2] * 4.0
    n = export_projection(tmp_path / "p.txt", V, [0, 0, 1, 1, 1], S, [0, 1])
    lines = (tmp_path / "p.txt").read_text().splitlines()
    assert n == len(lines) == 7
    first = lines[0].split()
    assert first[:2] == ["0", "v"]
    np.testing.assert_allclose([float(t) for t in first[2:]], V[0], rtol=0, atol=1e-15)
    assert lines[5] == "0 s 1 0 0"
    with pytest.raises(NotThreeDim):
        export_projection(tmp_path / "q.txt", np.ones((2, 5)), [0, 1], np.ones((2, 5)), [0, 1])
