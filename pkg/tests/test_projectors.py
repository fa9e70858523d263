import numpy as np
import pytest

from aurl.core import make_rng
from aurl.errors import BadSpec, BatchTooSmall, CorruptFile, DimMismatch, StaleCache
from aurl.projectors import (FDReport, LayerSpec, batchnorm, finite_diff_check, init_params, linear,
                             load_params, mlp_backward, mlp_forward, relu, save_params,
                             video_projector_spec, word_projector_spec)


def _loss_and_grads(params, X, G):
    """Scalar sum(G * f(X)) with its analytic gradients."""
    Y, cache = mlp_forward(params, X, "train")
    grads, dX = mlp_backward(params, cache, G)
    return float(np.sum(G * Y)), grads, dX


def test_init_single_linear():
    p = init_params([linear(4, 4)], make_rng(0))
    w = p.tensors["0.weight"]
    assert w.shape == (4, 4) and np.all(np.abs(w) < 0.5)
    np.testing.assert_array_equal(p.tensors["0.bias"], np.zeros(4))


def test_init_batchnorm_and_determinism():
    p = init_params(video_projector_spec(5, 7, 3), make_rng(4))
    np.testing.assert_array_equal(p.tensors["1.scale"], np.ones(7))
    np.testing.assert_array_equal(p.tensors["1.running_var"], np.ones(7))
    q = init_params(video_projector_spec(5, 7, 3), make_rng(4))
    assert p.tensors.keys() == q.tensors.keys()
    for k in p.tensors:
        np.testing.assert_array_equal(p.tensors[k], q.tensors[k])


def test_default_chains():
    fv = video_projector_spec()
    assert [l.kind for l in fv] == ["linear", "batchnorm", "relu", "linear", "batchnorm", "relu",
                                    "linear", "batchnorm"]
    assert (fv[0].in_dim, fv[-1].out_dim) == (512, 2048)
    fs = word_projector_spec()
    assert (fs[0].in_dim, fs[0].out_dim, fs[-1].out_dim) == (300, 512, 2048)
    assert len(fs) == 9


def test_bad_specs():
    with pytest.raises(BadSpec):
        init_params([], make_rng(0))
    with pytest.raises(BadSpec):
        init_params([linear(3, 4), relu(5)], make_rng(0))
    with pytest.raises(BadSpec):
        init_params([LayerSpec("batchnorm", 3, 4)], make_rng(0))
    with pytest.raises(BadSpec):
        init_params([LayerSpec("conv", 3, 3)], make_rng(0))


def test_identity_linear_forward():
    p = init_params([linear(3, 3)], make_rng(0))
    p.tensors["0.weight"][:] = np.eye(3)
    X = make_rng(1).standard_normal((4, 3))
    np.testing.assert_array_equal(mlp_forward(p, X, "eval")[0], X)


def test_batchnorm_train_standardizes(rng):
    p = init_params([batchnorm(5)], rng)
    X = rng.normal(3.0, 2.5, size=(40, 5))
    Y, _ = mlp_forward(p, X, "train")
    np.testing.assert_allclose(Y.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(Y.var(axis=0), 1, atol=1e-3)  # eps=1e-5 shrinks the variance slightly
    p0 = init_params([batchnorm(5)], rng)
    p0.eps = 0.0
    Y0, _ = mlp_forward(p0, X, "train")
    np.testing.assert_allclose(Y0.var(axis=0), 1, atol=1e-9)


def test_eval_rows_are_independent(rng):
    p = init_params(video_projector_spec(4, 6, 3), rng)
    mlp_forward(p, rng.standard_normal((16, 4)), "train")
    X = rng.standard_normal((5, 4))
    Y = mlp_forward(p, X, "eval")[0]
    Y_more = mlp_forward(p, np.vstack([X, rng.standard_normal((1, 4))]), "eval")[0]
    np.testing.assert_array_equal(Y_more[:5], Y)
    perm = rng.permutation(5)
    np.testing.assert_array_equal(mlp_forward(p, X[perm], "eval")[0], Y[perm])


def test_forward_errors(rng):
    p = init_params(video_projector_spec(4, 6, 3), rng)
    with pytest.raises(BatchTooSmall):
        mlp_forward(p, rng.standard_normal((1, 4)), "train")
    mlp_forward(p, rng.standard_normal((1, 4)), "eval")
    with pytest.raises(DimMismatch):
        mlp_forward(p, rng.standard_normal((3, 5)), "eval")


def test_running_stats_converge_geometrically(rng):
    p = init_params([batchnorm(3)], rng)
    X = rng.normal(2.0, 1.0, size=(10, 3))
    mu = X.mean(axis=0)
    for n in range(1, 31):
        mlp_forward(p, X, "train")
        np.testing.assert_allclose(p.tensors["0.running_mean"], mu * (1 - 0.9 ** n), rtol=1e-12)
    unbiased = X.var(axis=0, ddof=1)
    np.testing.assert_allclose(p.tensors["0.running_var"], unbiased + (1 - unbiased) * 0.9 ** 30, rtol=1e-12)


def test_linear_1x1_backward():
    p = init_params([linear(1, 1, bias=False)], make_rng(0))
    p.tensors["0.weight"][:] = 2.0
    X = np.array([[3.0]])
    _, cache = mlp_forward(p, X, "train")
    grads, dX = mlp_backward(p, cache, np.array([[0.5]]))
    assert grads["0.weight"][0, 0] == 1.5
    assert dX[0, 0] == 1.0


def test_relu_blocks_negative_inputs():
    p = init_params([relu(2)], make_rng(0))
    X = np.array([[-1.0, 2.0]])
    _, cache = mlp_forward(p, X, "train")
    _, dX = mlp_backward(p, cache, np.ones((1, 2)))
    np.testing.assert_array_equal(dX, [[0.0, 1.0]])


def test_stale_cache(rng):
    p = init_params(video_projector_spec(4, 6, 3), rng)
    _, cache = mlp_forward(p, rng.standard_normal((5, 4)), "train")
    with pytest.raises(StaleCache):
        mlp_backward(p.copy(), cache, np.ones((5, 3)))
    _, eval_cache = mlp_forward(p, rng.standard_normal((5, 4)), "eval")
    with pytest.raises(StaleCache):
        mlp_backward(p, eval_cache, np.ones((5, 3)))
    with pytest.raises(StaleCache):
        mlp_backward(p, cache, np.ones((4, 3)))


@pytest.mark.parametrize("which", ["video", "word"])
def test_full_chain_matches_finite_differences(which):
    rng = make_rng(8)
    spec = video_projector_spec(6, 10, 6) if which == "video" else word_projector_spec(6, 7, 10, 6)
    p = init_params(spec, rng)
    for name in p.trainable_names():
        p.tensors[name] += 0.1 * rng.standard_normal(p.tensors[name].shape)
    X = rng.standard_normal((8, 6))
    G = rng.standard_normal((8, 6))
    _, grads, dX = _loss_and_grads(p, X, G)
    fn = lambda: float(np.sum(G * mlp_forward(p, X, "train")[0]))
    rep = finite_diff_check(fn, {n: p.tensors[n] for n in p.trainable_names()}, grads)
    assert rep.passed, rep
    rep_x = finite_diff_check(fn, {"x": X}, {"x": dX})
    assert rep_x.passed, rep_x


def test_fd_check_quadratic():
    # dyadic values and a power-of-two step make every perturbed square exact
    p = {"a": np.array([1.0, -2.0, 0.5]), "b": np.array([[3.0]])}
    fn = lambda: float(sum(np.sum(v ** 2) for v in p.values()))
    rep = finite_diff_check(fn, p, {k: 2 * v for k, v in p.items()}, step=2.0 ** -20)
    assert rep.passed and rep.max_rel_error < 1e-10 and rep.n_checked == 4


def test_fd_check_reports_corrupted_coordinate():
    p = {"a": np.array([1.0, -2.0, 0.5]), "b": np.array([[3.0, 4.0]])}
    fn = lambda: float(sum(np.sum(v ** 2) for v in p.values()))
    grads = {k: 2 * v for k, v in p.items()}
    grads["b"][0, 1] *= 2
    rep = finite_diff_check(fn, p, grads)
    assert not rep.passed
    assert (rep.worst_name, rep.worst_index) == ("b", (0, 1))


def test_fd_check_subsamples_at_least_200():
    p = {"a": np.linspace(0.5, 2, 500)}
    fn = lambda: float(np.sum(p["a"] ** 3))
    rep = finite_diff_check(fn, p, {"a": 3 * p["a"] ** 2}, max_coords=50, rng=make_rng(0))
    assert rep.n_checked == 200 and rep.passed
    assert isinstance(rep, FDReport)


def test_params_round_trip(tmp_path, rng):
    p = init_params(word_projector_spec(5, 6, 7, 3), rng)
    mlp_forward(p, rng.standard_normal((9, 5)), "train")
    save_params(tmp_path / "p.ckpt", p)
    q = load_params(tmp_path / "p.ckpt")
    assert q.layers == p.layers and list(q.tensors) == list(p.tensors)
    for k in p.tensors:
        np.testing.assert_array_equal(q.tensors[k], p.tensors[k])
    raw = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:-9])
    with pytest.raises(CorruptFile):
        load_params(tmp_path / "bad.ckpt")
