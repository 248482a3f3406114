import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import linalg

from eigopt.mesh import DensityPair, assemble_mass, assemble_stiffness, build_flat_torus_mesh
from eigopt.spectrum import (SolverError, cluster_multiplicity, cluster_of, exponent_q,
                             lambda_k, normalized_eigenvalue, pencil, solve_lowest, spectrum)


def test_dense_matches_scipy(sphere2, rng):
    pair = DensityPair(rng.uniform(0.5, 2, sphere2.n_simplices),
                       rng.uniform(0.5, 2, sphere2.n_simplices))
    K, M = pencil(sphere2, pair)
    ref = linalg.eigh(K.toarray(), M.toarray(), eigvals_only=True)[:8]
    res = solve_lowest(K, M, 8)
    assert_allclose(res.eigenvalues, ref, rtol=1e-10, atol=1e-10)
    assert res.residuals.max() < 1e-10


@pytest.mark.parametrize("method", ["subspace", "lobpcg"])
def test_iterative_methods_agree(sphere3, method):
    pair = DensityPair.uniform(sphere3)
    K, M = pencil(sphere3, pair)
    dense = solve_lowest(K, M, 9, method="dense")
    res = solve_lowest(K, M, 9, method=method)
    assert_allclose(res.eigenvalues, dense.eigenvalues, rtol=1e-7, atol=1e-8)


def test_shift_invert_on_simple_spectrum(sphere2, rng):
    pair = DensityPair(rng.uniform(0.5, 2, sphere2.n_simplices),
                       rng.uniform(0.5, 2, sphere2.n_simplices))
    K, M = pencil(sphere2, pair)
    dense = solve_lowest(K, M, 6, method="dense")
    res = solve_lowest(K, M, 6, method="shift-invert")
    assert_allclose(res.eigenvalues, dense.eigenvalues, rtol=1e-7, atol=1e-8)


def test_sphere_clusters(sphere3):
    res = spectrum(sphere3, DensityPair.uniform(sphere3), 12)
    assert [len(c) for c in res.clusters] == [1, 3, 5, 3]
    assert cluster_of(res, 2) == [1, 2, 3]
    assert cluster_multiplicity(res, 6) == 5
    assert_allclose(res.eigenvalues[1], 2.0, rtol=1e-2)
    assert_allclose(res.eigenvalues[4], 6.0, rtol=2e-2)


def test_torus_spectrum():
    mesh = build_flat_torus_mesh(2, 32)
    res = spectrum(mesh, DensityPair.uniform(mesh), 9)
    assert_allclose(res.eigenvalues[1:5], 1.0, rtol=5e-3)
    assert_allclose(res.eigenvalues[5:9], 2.0, rtol=2e-2)
    assert cluster_of(res, 1) == [1, 2, 3, 4]


def test_eigenvectors_mass_orthonormal(sphere2):
    K, M = pencil(sphere2, DensityPair.uniform(sphere2))
    res = solve_lowest(K, M, 6)
    G = res.eigenvectors.T @ (M @ res.eigenvectors)
    assert_allclose(G, np.eye(6), atol=1e-10)


def test_deterministic(sphere3):
    K, M = pencil(sphere3, DensityPair.uniform(sphere3))
    a = solve_lowest(K, M, 6, method="subspace", seed=3)
    b = solve_lowest(K, M, 6, method="subspace", seed=3)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_zero_mu_cells_give_infinite_eigenvalues(sphere2):
    n = sphere2.n_simplices
    mu = np.zeros(n)
    mu[0] = 1.0                                   # only 3 vertices carry mass
    res = spectrum(sphere2, DensityPair(np.ones(n), mu), 5)
    assert res.rank_deficient
    assert np.all(np.isfinite(res.eigenvalues[:3]))
    assert np.all(np.isinf(res.eigenvalues[3:]))


def test_homogeneity(sphere2, rng):
    pair = DensityPair(rng.uniform(0.5, 2, sphere2.n_simplices),
                       rng.uniform(0.5, 2, sphere2.n_simplices))
    lam = lambda_k(sphere2, pair, 2)
    assert_allclose(lambda_k(sphere2, pair.scaled(3.0, 2.0), 2), 1.5 * lam, rtol=1e-10)
    for p in (2.0, 3.0, 5.0):
        v = normalized_eigenvalue(sphere2, pair, 2, p)
        assert_allclose(normalized_eigenvalue(sphere2, pair.scaled(3.0, 2.0), 2, p), v,
                        rtol=1e-10)


def test_exponent_q():
    assert exponent_q(2.0) == math.inf
    assert exponent_q(4.0) == 2.0
    with pytest.raises(ValueError):
        exponent_q(1.5)


def test_bad_count(sphere2):
    K, M = pencil(sphere2, DensityPair.uniform(sphere2))
    with pytest.raises(ValueError):
        solve_lowest(K, M, 0)
    with pytest.raises(ValueError):
        solve_lowest(K, M, 5, method="nonsense")


def test_lumped_upper_vs_consistent(sphere3):
    # consistent mass overestimates, lumped underestimates the round-sphere value
    pair = DensityPair.uniform(sphere3)
    lc = lambda_k(sphere3, pair, 1)
    ll = lambda_k(sphere3, pair, 1, lumped=True)
    assert ll < 2.0 < lc
