import math

import numpy as np
import pytest

from capsctx import tensor as T
from capsctx.crf import (MeanFieldState, crf, crf_energy, crf_init, crf_iterate, crf_step,
                         init_pairwise)


def softmax_j(x):
    e = np.exp(x - x.max(axis=-2, keepdims=True))
    return e / e.sum(axis=-2, keepdims=True)


def test_init_examples():
    p = np.zeros((1, 1, 2, 1))
    np.testing.assert_allclose(crf_init(T.Tensor(p)).marginals.data[0, 0, :, 0], [0.5, 0.5])
    p[0, 0, 0, 0] = math.log(2.0)
    np.testing.assert_allclose(crf_init(T.Tensor(p)).marginals.data[0, 0, :, 0], [2 / 3, 1 / 3],
                               atol=1e-15)


def test_init_shift_invariance():
    p = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    a = crf_init(T.Tensor(p)).marginals.data
    b = crf_init(T.Tensor(p + 7.0)).marginals.data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_hand_example_one_step():
    h = np.array([1.0, 0.0]).reshape(1, 1, 2, 1)
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = crf_step(MeanFieldState(T.Tensor(h)), T.Tensor(m)).marginals.data[0, 0, :, 0]
    e2 = math.exp(2.0)
    np.testing.assert_allclose(out, [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)
    np.testing.assert_allclose(out, [0.8808, 0.1192], atol=1e-4)


def test_zero_M_two_line_oracle():
    p = np.random.default_rng(1).normal(size=(2, 4, 3, 5))
    h0 = softmax_j(p)
    h1 = softmax_j(h0)
    got = crf(T.Tensor(p), T.Tensor(np.zeros((3, 3))), 1).data
    assert np.abs(got - h1).max() < 1e-12


def test_normalised_every_iteration():
    rng = np.random.default_rng(2)
    for seed in range(10):
        p = rng.normal(0, 3, size=(2, 5, 4, 3))
        for m in (rng.normal(0, 2, (4, 4)), rng.normal(0, 2, (3, 4, 4))):
            trace = []
            state = crf_init(T.Tensor(p))
            crf_iterate(state, T.Tensor(m), 4, trace)
            for st in [state] + trace:
                h = st.marginals.data
                assert (h >= 0).all()
                assert np.abs(h.sum(axis=2) - 1).max() < 1e-9


def test_locality_exact():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(1, 4, 3, 5))
    m = T.Tensor(rng.normal(size=(3, 3)))
    base = crf(T.Tensor(p), m, 3).data
    q = p.copy()
    q[0, 2, :, 1] += rng.normal(size=3)
    moved = crf(T.Tensor(q), m, 3).data
    diff = moved != base
    mask = np.zeros_like(diff)
    mask[0, 2, :, 1] = True
    assert not diff[~mask].any()
    assert diff[mask].any()


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(1, 2, 4, 3))
    m = rng.normal(size=(4, 4)) * (1 - np.eye(4))
    perm = rng.permutation(4)
    a = crf(T.Tensor(p), T.Tensor(m), 3).data[:, :, perm]
    b = crf(T.Tensor(p[:, :, perm]), T.Tensor(m[np.ix_(perm, perm)]), 3).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_diagonal_of_M_is_ignored():
    rng = np.random.default_rng(5)
    p = T.Tensor(rng.normal(size=(1, 2, 3, 2)))
    m = rng.normal(size=(3, 3))
    a = crf(p, T.Tensor(m), 2).data
    b = crf(p, T.Tensor(m * (1 - np.eye(3))), 2).data
    np.testing.assert_array_equal(a, b)


def test_energy_examples_and_double_loop():
    rng = np.random.default_rng(6)
    p = rng.normal(size=(4, 3, 2))           # (K, J, I_d)
    np.testing.assert_allclose(crf_energy(p, np.zeros((3, 3))), -p.sum(axis=1), atol=1e-15)
    assert not crf_energy(np.zeros((4, 3, 2)), rng.normal(size=(3, 3))).any()
    m = rng.normal(size=(3, 3))
    got = crf_energy(p, m)
    for k in range(4):
        for i in range(2):
            z = -sum(p[k, j, i] for j in range(3))
            for j in range(3):
                for jj in range(3):
                    if j != jj:
                        z += m[j, jj] * p[k, j, i] * p[k, jj, i]
            assert abs(got[k, i] - z) < 1e-12


def test_init_pairwise_gain_neutral_near_uniform():
    rng = np.random.default_rng(7)
    j = 8
    m = init_pairwise(j, 4, "all", 0.0, rng, gain=1.0)
    assert (np.diag(m) == 0).all() and np.allclose(m[~np.eye(j, dtype=bool)], j - 1)
    dev = rng.normal(size=j)
    dev -= dev.mean()
    h = 1 / j + 1e-6 * dev
    out = crf_step(MeanFieldState(T.Tensor(h.reshape(1, 1, j, 1))), T.Tensor(m)).marginals.data
    np.testing.assert_allclose((out.ravel() - 1 / j) / (1e-6 * dev), 1.0, rtol=1e-4)
    assert init_pairwise(j, 4, "per-i", 0.01, rng).shape == (4, j, j)


def test_weight_shape_checked():
    with pytest.raises(T.ShapeError):
        crf(T.Tensor(np.zeros((1, 2, 3, 4))), T.Tensor(np.zeros((2, 3, 3))), 1)
