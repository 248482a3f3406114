import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from eigopt.tensor import (TensorError, align_isometry, block_norm_check, dual_trace_norm,
                           gram_convergence_experiment, hs_norm, powers_stormer_check,
                           psd_sqrt, random_orthogonal, random_projector, trace_norm)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(rows, cols):
    return arrays(np.float64, (rows, cols), elements=finite)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda r: st.integers(1, 6).flatmap(
    lambda n: st.tuples(matrices(r, n), matrices(r, n)))))
def test_powers_stormer(AB):
    A, B = AB
    assert powers_stormer_check(A, B)["holds"]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(matrices(n, n), st.integers(0, 2 ** 31))))
def test_block_norm(tc):
    t, seed = tc
    P = random_projector(t.shape[0], np.random.default_rng(seed))
    assert block_norm_check(t, P)["holds"]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(matrices(n, n), matrices(n, n))))
def test_trace_norm_triangle(AB):
    A, B = AB
    assert trace_norm(A + B) <= trace_norm(A) + trace_norm(B) + 1e-9
    assert hs_norm(A) <= trace_norm(A) + 1e-9


def test_duality_random_4x4(rng):
    for _ in range(20):
        t = rng.standard_normal((4, 4))
        val, Q = dual_trace_norm(t)
        assert_allclose(Q.T @ Q, np.eye(4), atol=1e-12)
        assert_allclose(val, trace_norm(t), rtol=1e-12)
        for _ in range(10):
            U = random_orthogonal(4, rng)
            assert np.trace(U.T @ t) <= val + 1e-12


def test_psd_sqrt(rng):
    A = rng.standard_normal((5, 3))
    S = A @ A.T                                        # rank 3
    R = psd_sqrt(S)
    assert_allclose(R @ R, S, atol=1e-10)
    assert np.linalg.eigvalsh(R).min() >= 0
    with pytest.raises(TensorError):
        psd_sqrt(-np.eye(2))
    with pytest.raises(TensorError):
        psd_sqrt(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_align_isometry(rng):
    F1 = rng.standard_normal((6, 3))
    F2 = random_orthogonal(6, rng) @ F1
    I = align_isometry(F1, F2)
    assert_allclose(I @ F1, F2, atol=1e-12)
    with pytest.raises(TensorError):
        align_isometry(F1, 2 * F2)


def test_align_isometry_rank_deficient(rng):
    F1 = np.outer(rng.standard_normal(5), rng.standard_normal(3))
    F2 = random_orthogonal(5, rng) @ F1
    I = align_isometry(F1, F2)
    assert_allclose(I @ F1, F2, atol=1e-12)
    assert np.linalg.matrix_rank(I) == 1


def test_rejects_bad_inputs():
    with pytest.raises(TensorError):
        trace_norm(np.array([[np.nan]]))
    with pytest.raises(TensorError):
        block_norm_check(np.eye(2), np.array([[1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(TensorError):
        powers_stormer_check(np.eye(2), np.eye(3))


def test_gram_experiment():
    F = np.random.default_rng(0).standard_normal((5, 4))
    exp = gram_convergence_experiment(F, np.logspace(-6, -1, 8), seed=1)
    assert len(exp.table()) == 8
    assert 0.8 < exp.slope < 1.2                       # distance ~ Gram gap near F
    assert exp.c_lower <= 1.0 + 1e-9
    for r in exp.rows:
        assert r.aligned_distance <= exp.c_upper * np.sqrt(r.gram_gap) * (1 + 1e-12)
