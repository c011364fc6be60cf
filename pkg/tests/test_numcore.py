import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from trigfn import numcore as nc
from trigfn.gradcheck import check_op
from trigfn.graphio import Graph


def test_matmul_examples():
    m = np.array([[1.5, -2.0], [0.25, 7.0]])
    np.testing.assert_array_equal(nc.matmul(np.eye(2), m), m)
    np.testing.assert_array_equal(nc.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]])),
                                  [[2.0], [4.0]])
    np.testing.assert_array_equal(nc.matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4)), np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nc.DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        nc.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_spmm_examples():
    m = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(nc.spmm(sp.identity(3, format="csr"), m), m)
    half = sp.csr_matrix(np.full((2, 2), 0.5))
    np.testing.assert_array_equal(nc.spmm(half, np.eye(2)), np.full((2, 2), 0.5))
    np.testing.assert_array_equal(nc.spmm(sp.csr_matrix((3, 3)), m), np.zeros((3, 2)))
    with pytest.raises(nc.DimensionError):
        nc.spmm(sp.identity(2, format="csr"), m)


def _loop_product(dense, x):
    # neighbours accumulate in lexicographic order of their operand rows, ties by coefficient
    n, d = dense.shape[0], x.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        nbrs = sorted((j for j in range(dense.shape[1]) if dense[i, j] != 0.0),
                      key=lambda j: (tuple(x[j]), dense[i, j]))
        for c in range(d):
            acc = 0.0
            for j in nbrs:
                acc += float(dense[i, j]) * float(x[j, c])
            out[i, c] = acc
    return out


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 50), d=st.integers(1, 3), p=st.floats(0.0, 0.6), seed=st.integers(0, 2**31))
def test_spmm_matches_dense_oracle_exactly(n, d, p, seed):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    g = Graph(features=rng.normal(size=(n, d)), edges=np.stack([iu[0][keep], iu[1][keep]], axis=1), n_clusters=1)
    got = nc.spmm(g.norm_adj, g.features)
    np.testing.assert_array_equal(got, _loop_product(g.norm_adj.toarray(), g.features))


def test_leaky_relu_examples():
    np.testing.assert_array_equal(nc.leaky_relu(np.array([[1.0, -1.0, 0.0]]), 0.01), [[1.0, -0.01, 0.0]])
    with pytest.raises(ValueError):
        nc.leaky_relu(np.ones((1, 1)), -0.1)


def test_leaky_relu_subgradient_at_zero_is_slope():
    tape = nc.Tape()
    x = tape.param(np.zeros((1, 1)))
    tape.backward(nc.total(nc.leaky_relu(x, 0.2)))
    assert x.grad[0, 0] == 0.2


def test_sigmoid_examples():
    assert nc.sigmoid(np.zeros((1, 1)))[0, 0] == 0.5
    assert abs(nc.sigmoid(np.full((1, 1), 50.0))[0, 0] - 1.0) <= 1e-12
    x = np.full((1, 1), 1.7)
    assert math.isclose(nc.sigmoid(-x)[0, 0], 1.0 - nc.sigmoid(x)[0, 0], rel_tol=0, abs_tol=1e-15)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=30))
def test_sigmoid_strictly_inside_unit_interval(xs):
    y = nc.sigmoid(np.array([xs]))
    assert np.all(y > 0.0) and np.all(y < 1.0)


def test_group_softmax_examples():
    out = nc.softmax_over_index_groups(np.array([[3.7], [0.0], [0.0], [math.log(2.0)], [0.0]]),
                                       np.array([0, 1, 1, 2, 2]), 3)
    np.testing.assert_allclose(out.ravel(), [1.0, 0.5, 0.5, 2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_group_softmax_empty_group_has_no_entries():
    out = nc.softmax_over_index_groups(np.array([[1.0], [2.0]]), np.array([0, 2]), 3)
    np.testing.assert_array_equal(out.ravel(), [1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(sizes=st.lists(st.integers(1, 64), min_size=1, max_size=8), seed=st.integers(0, 2**31),
       spread=st.floats(0.1, 300.0))
def test_group_softmax_sums_to_one(sizes, seed, spread):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(len(sizes)), sizes)
    rng.shuffle(groups)
    scores = rng.uniform(-spread, spread, size=(groups.size, 1))
    out = nc.softmax_over_index_groups(scores, groups, len(sizes)).ravel()
    assert np.all(out > 0)
    sums = np.bincount(groups, weights=out, minlength=len(sizes))
    np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-12)


def test_finite_diff_check_examples():
    triple = nc.DifferentiableOp("triple", lambda x: 3.0 * x, lambda g, y, x: (3.0 * g,))
    rep = nc.finite_diff_check(triple, [np.array([[2.0]])], step=1e-5)
    assert rep.passed and rep.max_rel_err < 1e-8

    rep = nc.finite_diff_check(nc.OPS["sigmoid"], [np.array([[0.3]])], step=1e-5, tol=1e-6)
    assert rep.passed
    s = 1.0 / (1.0 + math.exp(-0.3))
    tape = nc.Tape()
    x = tape.param(np.array([[0.3]]))
    tape.backward(nc.sigmoid(x))
    assert math.isclose(x.grad[0, 0], s * (1 - s), rel_tol=1e-15)


def test_finite_diff_check_catches_corrupted_vjp():
    good = nc.OPS["mul"]
    bad = nc.DifferentiableOp("mul_bad", good.forward, lambda g, y, a, b: (g * b + 0.1, g * a), good.sample)
    assert not check_op(bad).passed
    assert check_op(good).passed


def test_finite_diff_check_reports_non_finite_forward():
    with np.errstate(invalid="ignore"):
        rep = nc.finite_diff_check(nc.OPS["log"], [np.array([[-1.0]])])
    assert not rep.passed and "non-finite" in rep.diagnostic
    with pytest.raises(ValueError):
        nc.finite_diff_check(nc.OPS["log"], [np.array([[1.0]])], step=0.0)


@pytest.mark.parametrize("name", sorted(n for n, op in nc.OPS.items() if op.sample is not None))
def test_every_registered_op_matches_central_differences(name):
    rep = check_op(nc.OPS[name], samples=20, step=1e-5, tol=1e-4)
    assert rep.passed, rep.line()


def test_every_registered_op_has_a_sampler():
    assert all(op.sample is not None for op in nc.OPS.values())


def test_vjp_shapes_match_inputs():
    rng = nc.make_rng(3)
    for op in nc.OPS.values():
        inputs, attrs = op.sample(rng)
        y = op.forward(*inputs, **attrs)
        cots = op.vjp(np.ones_like(y), y, *inputs, **attrs)
        for x, c in zip(inputs, cots):
            assert c is None or np.shape(c) == np.shape(x), op.name


def test_tape_composite_gradient():
    # f(a, b) = sum((a @ b) ** 2) has gradient 2 (a b) b^T
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
    tape = nc.Tape()
    a, b = tape.param(a0), tape.param(b0)
    tape.backward(nc.sum_squares(nc.matmul(a, b)))
    np.testing.assert_allclose(a.grad, 2 * (a0 @ b0) @ b0.T, rtol=1e-13)
    np.testing.assert_allclose(b.grad, 2 * a0.T @ (a0 @ b0), rtol=1e-13)
    assert tape.nodes == []


def test_backward_needs_scalar():
    tape = nc.Tape()
    with pytest.raises(nc.DimensionError):
        tape.backward(nc.scale(tape.param(np.ones((2, 2))), 2.0))


def test_rng_reproducible():
    a = nc.make_rng(2024).random(10_000)
    b = nc.make_rng(2024).random(10_000)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, nc.make_rng(2025).random(10_000))
    np.testing.assert_array_equal(nc.make_rng(1, 4).normal(size=50), nc.make_rng(1, 4).normal(size=50))
    assert not np.array_equal(nc.make_rng(1, 4).normal(size=50), nc.make_rng(1, 5).normal(size=50))


def test_kink_distance_sees_leaky_inputs():
    tape = nc.Tape()
    x = tape.param(np.array([[0.5, -0.003, 2.0]]))
    nc.leaky_relu(x)
    assert nc.kink_distance(tape) == pytest.approx(0.003)
