import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablegnn.gradcheck import check_gradients, gradcheck_suite, relative_error
from stablegnn.graph import DimensionMismatch, gso_from_matrix, inverse_permutation, permute, \
    permute_signal
from stablegnn.model import (EmptyMask, GnnConfig, GnnParams, NonFiniteActivation, ShapeMismatch,
                             StaleTape, backward, filter_apply, forward, init_params,
                             loss_smooth_l1, zero_params)
from stablegnn.synthetic import random_batch, random_gso

PATH3 = gso_from_matrix([[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def naive_forward(s, x, params):
    """Reference GNN written with explicit loops over nodes, features and taps."""
    n = len(x)
    cfg = params.config
    z = [[float(v)] for v in x]
    for l, h in enumerate(params.h):
        k_taps, fin, fout = h.shape
        powers = [[[float(i == j) for j in range(n)] for i in range(n)]]
        for _ in range(k_taps - 1):
            prev = powers[-1]
            powers.append([[sum(prev[i][m] * s[m][j] for m in range(n)) for j in range(n)]
                           for i in range(n)])
        out = []
        for i in range(n):
            row = []
            for f in range(fout):
                acc = 0.0
                for k in range(k_taps):
                    for j in range(n):
                        if powers[k][i][j] == 0.0:
                            continue
                        for g in range(fin):
                            acc += powers[k][i][j] * z[j][g] * h[k, g, f]
                if cfg.bank_activation(l) == "relu":
                    acc = max(acc, 0.0)
                row.append(acc)
            out.append(row)
        z = out
    return np.array([r[0] for r in z])


def test_filter_identity_tap():
    x = np.array([[1.0], [-2.0], [3.0]])
    np.testing.assert_array_equal(filter_apply(PATH3, x, [np.array([[1.0]])]), x)


def test_filter_pure_shift():
    x = np.array([[1.0], [2.0], [5.0]])
    y = filter_apply(PATH3, x, [np.array([[0.0]]), np.array([[1.0]])])
    np.testing.assert_array_equal(y, PATH3.s @ x)


def test_filter_polynomial_on_path_graph():
    # x + Sx + S^2 x for x = e_0 on the 3-node path, by explicit matrix powers:
    # Sx = e_1, S^2 x = e_0 + e_2, so the sum is [2, 1, 1]
    s = PATH3.s
    x = np.array([1.0, 0.0, 0.0])
    oracle = x + s @ x + np.linalg.matrix_power(s, 2) @ x
    np.testing.assert_array_equal(oracle, [2.0, 1.0, 1.0])
    y = filter_apply(PATH3, x[:, None], [np.ones((1, 1))] * 3)
    np.testing.assert_array_equal(y[:, 0], [2.0, 1.0, 1.0])


def test_filter_dimension_checks():
    with pytest.raises(DimensionMismatch):
        filter_apply(PATH3, np.ones((4, 1)), [np.ones((1, 1))])
    with pytest.raises(DimensionMismatch):
        filter_apply(PATH3, np.ones((3, 2)), [np.ones((1, 1))])


def test_config_validation():
    with pytest.raises(ValueError):
        GnnConfig((2, 4, 1))
    with pytest.raises(ValueError):
        GnnConfig((1, 4, 1), taps=0)
    with pytest.raises(ValueError):
        GnnConfig((1, 4, 1), activation="tanh")
    cfg = GnnConfig.from_hidden((64, 32), taps=5, readout_taps=1)
    assert cfg.bank_shapes() == [(5, 1, 64), (5, 64, 32), (1, 32, 1)]
    assert [cfg.bank_activation(l) for l in range(3)] == ["relu", "relu", "identity"]


def test_params_shape_validation():
    cfg = GnnConfig((1, 2, 1), taps=2)
    with pytest.raises(ShapeMismatch):
        GnnParams(cfg, [np.zeros((2, 1, 2))])
    with pytest.raises(ShapeMismatch):
        GnnParams(cfg, [np.zeros((2, 1, 3)), np.zeros((2, 3, 1))])


def test_init_bounds():
    cfg = GnnConfig.from_hidden((64, 32), taps=5)
    p = init_params(cfg, np.random.default_rng(0))
    for (k, fin, _), h in zip(cfg.bank_shapes(), p.h):
        assert np.abs(h).max() <= 1 / np.sqrt(fin * k)
    assert p.num_params == 5 * 64 + 5 * 64 * 32 + 5 * 32


def test_zero_params_give_zero_output():
    g = random_gso(6, np.random.default_rng(0))
    y, _ = forward(g, np.arange(6.0), zero_params(GnnConfig((1, 4, 1), taps=3)))
    np.testing.assert_array_equal(y, np.zeros(6))


def test_single_tap_linear_is_scaling():
    g = random_gso(5, np.random.default_rng(0))
    p = GnnParams(GnnConfig((1, 1), taps=1, activation="identity"), [np.array([[[2.5]]])])
    x = np.array([1.0, -2.0, 0.5, 3.0, 0.0])
    y, _ = forward(g, x, p)
    np.testing.assert_array_equal(y, 2.5 * x)


@pytest.mark.parametrize("hidden", [(64,), (64, 32)])
def test_forward_matches_naive_reference(hidden):
    rng = np.random.default_rng(42)
    g = random_gso(7, rng)
    params = init_params(GnnConfig.from_hidden(hidden, taps=5), rng)
    x = rng.standard_normal(7)
    y, _ = forward(g, x, params)
    np.testing.assert_allclose(y, naive_forward(g.s.tolist(), x, params), atol=1e-12, rtol=0)


def test_batched_forward_matches_single():
    rng = np.random.default_rng(3)
    g = random_gso(9, rng)
    params = init_params(GnnConfig.from_hidden((6, 3), taps=4), rng)
    xs = rng.standard_normal((4, 9))
    yb, _ = forward(g, xs, params)
    for x, y in zip(xs, yb):
        np.testing.assert_allclose(forward(g, x, params)[0], y, atol=1e-13)


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    g = random_gso(10, rng)
    params = init_params(GnnConfig.from_hidden((8, 4)), rng)
    x = rng.standard_normal((3, 10))
    np.testing.assert_array_equal(forward(g, x, params)[0], forward(g, x, params)[0])


def test_forward_nonfinite():
    g = random_gso(4, np.random.default_rng(0), normalize=False)
    p = GnnParams(GnnConfig((1, 1), taps=1, activation="identity"), [np.array([[[1e308]]])])
    with pytest.raises(NonFiniteActivation):
        forward(g, np.full(4, 1e10), p)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_identity_activation_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    g = random_gso(8, rng)
    params = init_params(GnnConfig.from_hidden((3, 2), taps=3, activation="identity"), rng)
    x, z = rng.standard_normal((2, 8))
    lhs = forward(g, a * x + b * z, params)[0]
    rhs = a * forward(g, x, params)[0] + b * forward(g, z, params)[0]
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), hidden=st.sampled_from([(16,), (16, 8)]))
def test_permutation_equivariance(seed, hidden):
    rng = np.random.default_rng(seed)
    g = random_gso(12, rng)
    params = init_params(GnnConfig.from_hidden(hidden, taps=4), rng)
    x = rng.standard_normal(12)
    p = rng.permutation(12)
    y = forward(g, x, params)[0]
    yp = forward(permute(g, p), permute_signal(x, p), params)[0]
    np.testing.assert_allclose(yp, permute_signal(y, p), atol=1e-10, rtol=0)
    np.testing.assert_allclose(permute_signal(yp, inverse_permutation(p)), y, atol=1e-10, rtol=0)


# loss ------------------------------------------------------------------------

def test_loss_zero_at_equality():
    y = np.array([1.0, 2.0, 3.0])
    value, grad = loss_smooth_l1(y, y, np.ones(3, bool))
    assert value == 0.0
    np.testing.assert_array_equal(grad, 0.0)


@pytest.mark.parametrize("d,value,grad", [(0.5, 0.125, 0.5), (2.0, 1.5, 1.0), (-2.0, 1.5, -1.0)])
def test_loss_single_node(d, value, grad):
    mask = np.array([False, True, False])
    y = np.array([0.0, 1.0, 0.0])
    v, g = loss_smooth_l1(y + np.array([9.0, d, -4.0]), y, mask)
    assert v == pytest.approx(value, abs=1e-15)
    np.testing.assert_allclose(g, [0.0, grad, 0.0], atol=1e-15)


def test_loss_empty_mask():
    with pytest.raises(EmptyMask):
        loss_smooth_l1(np.ones(3), np.zeros(3), np.zeros(3, bool))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(0.1, 3.0))
def test_loss_nonnegative(seed, beta):
    rng = np.random.default_rng(seed)
    b = random_batch(6, 3, rng)
    v, _ = loss_smooth_l1(b.inputs * 3, b.targets, b.masks, beta)
    assert v >= 0


# backward --------------------------------------------------------------------

def test_zero_upstream_gives_zero_gradient():
    rng = np.random.default_rng(0)
    g = random_gso(6, rng)
    params = init_params(GnnConfig.from_hidden((4, 2), taps=3), rng)
    x = rng.standard_normal((2, 6))
    _, tape = forward(g, x, params)
    grads = backward(tape, np.zeros((2, 6)), g, params)
    assert all(not np.any(h) for h in grads.h)


def test_scalar_linear_model_closed_form():
    rng = np.random.default_rng(1)
    g = random_gso(5, rng)
    p = GnnParams(GnnConfig((1, 1), taps=1, activation="identity"), [np.array([[[0.7]]])])
    x = rng.uniform(-1, 1, 5)
    y = x * 0.7 + rng.uniform(-0.3, 0.3, 5)   # |d| < beta everywhere
    mask = np.array([True, False, True, True, False])
    y_hat, tape = forward(g, x, p)
    _, dy = loss_smooth_l1(y_hat, y, mask)
    grad = backward(tape, dy, g, p).h[0][0, 0, 0]
    d = y_hat - y
    assert grad == pytest.approx(np.sum(d[mask] * x[mask]) / mask.sum(), rel=1e-12)


def test_stale_tape():
    rng = np.random.default_rng(0)
    g = random_gso(5, rng)
    p = init_params(GnnConfig((1, 2, 1), taps=2), rng)
    _, tape = forward(g, rng.standard_normal(5), p)
    with pytest.raises(StaleTape):
        backward(tape, np.ones(5), g, p.copy())
    with pytest.raises(StaleTape):
        backward(tape, np.ones(5), random_gso(5, rng), p)


@pytest.mark.parametrize("hidden,taps", list(itertools.product(
    [(2,), (4,), (2, 1), (4, 2), (4, 4), (2, 4)], [1, 2, 5])))
def test_gradient_matches_finite_differences(hidden, taps):
    rng = np.random.default_rng(hash((hidden, taps)) % 2**32)
    g = random_gso(7, rng)
    batch = random_batch(7, 3, rng)
    res = check_gradients(init_params(GnnConfig.from_hidden(hidden, taps=taps), rng), g, batch)
    assert res.max_rel_err < 1e-4
    assert res.skipped <= res.coords // 10


def test_gradcheck_suite_passes():
    results = gradcheck_suite()
    assert len(results) == 12
    assert max(r.max_rel_err for r in results) < 1e-4


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6, rel=1e-3)
