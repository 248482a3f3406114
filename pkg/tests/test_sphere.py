import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from eigopt.sphere import (INFINITE, PhiParams, SphereOracleError, harmonic_multiplicity,
                           hersch_bound, index_q_ell, jacobi_alpha, jacobi_index,
                           phi_energy, phi_energy_closed_form, phi_energy_density,
                           phi_energy_monte_carlo, phi_pullback_check, regularity_thresholds,
                           sphere_volume, sturm_liouville_index, total_index)

# frozen reference values, derived by hand from the quadratic in alpha
ALPHA_10_0 = 4.0 - math.sqrt(7.0)
ALPHA_10_1 = (7.0 - math.sqrt(17.0)) / 2.0


def test_frozen_alpha_roots():
    assert_allclose(jacobi_alpha(PhiParams(10, 0, 2)), ALPHA_10_0, rtol=1e-15)
    assert_allclose(jacobi_alpha(PhiParams(10, 1, 2)), ALPHA_10_1, rtol=1e-15)


def test_frozen_totals():
    assert total_index(PhiParams(10, 0, 2)).total == 2
    assert total_index(PhiParams(10, 1, 2)).total == 3


def test_infinite_index():
    rep = total_index(PhiParams(6, 0, 2))
    assert rep.alpha_root is INFINITE and rep.total is INFINITE
    rep = total_index(PhiParams(10, 4, 2))
    assert rep.total is INFINITE
    assert rep.strict_range
    assert rep.to_row()["total"] == "INFINITE"


def test_infinite_singleton():
    assert pickle.loads(pickle.dumps(INFINITE)) is INFINITE
    assert repr(INFINITE) == "INFINITE"


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 30), st.integers(0, 28), st.floats(2.0, 4.0))
def test_alpha_satisfies_quadratic(m, k, p):
    if k > m - 2:
        return
    prm = PhiParams(m, k, p)
    a = jacobi_alpha(prm)
    b = prm.n_tilde - 1
    if a is INFINITE:
        assert b * b < 4 * prm.n
        return
    other = prm.n / a
    assert_allclose(a + other, b, rtol=1e-12)        # Vieta: sum of roots
    assert a <= other + 1e-12 * abs(other)
    assert abs(a * a - b * a + prm.n) <= 1e-10 * max(1.0, b * b)


def test_index_q_ell_counting():
    assert index_q_ell(1.35, 0) == 1
    assert index_q_ell(2.0, 0) == 1
    assert index_q_ell(2.01, 0) == 2
    assert index_q_ell(1.35, 1) == 1
    assert index_q_ell(1.35, 2) == 0
    with pytest.raises(SphereOracleError):
        index_q_ell(INFINITE, 0)


@pytest.mark.parametrize("k,ell,expected", [(0, 0, 1), (0, 1, 1), (0, 2, 0), (1, 0, 1),
                                            (1, 3, 2), (2, 1, 3), (2, 2, 5), (3, 2, 9)])
def test_harmonic_multiplicity(k, ell, expected):
    assert harmonic_multiplicity(k, ell) == expected


@pytest.mark.parametrize("m,k,p", [(10, 0, 2), (10, 1, 2), (12, 2, 2.5), (16, 3, 3),
                                   (20, 5, 2)])
def test_three_index_oracles_agree(m, k, p):
    prm = PhiParams(m, k, p)
    a = jacobi_alpha(prm)
    for ell in range(4):
        expected = index_q_ell(a, ell)
        assert jacobi_index(prm, ell) == expected
        assert sturm_liouville_index(prm, ell, N=400) == expected


def test_pullback_matches_closed_form(rng):
    prm = PhiParams(6, 2, 2)
    for _ in range(5):
        z = rng.normal(size=7)
        z /= np.linalg.norm(z)
        chk = phi_pullback_check(prm, z)
        assert_allclose(chk["numeric"], chk["analytic"], rtol=1e-7)


def test_energy_density_inverse_square():
    prm = PhiParams(5, 1, 2)
    z = np.array([0.6, 0.0, 0.0, 0.0, 0.8, 0.0])
    assert_allclose(phi_energy_density(prm, z), prm.n / 0.36, rtol=1e-14)
    with pytest.raises(SphereOracleError):
        phi_energy_density(prm, np.array([0, 0, 0, 0, 1.0, 0]))


def test_frozen_energy_m4():
    prm = PhiParams(4, 0, 2)
    assert_allclose(phi_energy(prm), 12 * math.pi ** 2, rtol=1e-13)
    assert_allclose(phi_energy_closed_form(prm), 12 * math.pi ** 2, rtol=1e-13)
    mc = phi_energy_monte_carlo(prm, samples=400_000, seed=1)
    assert abs(mc / (12 * math.pi ** 2) - 1) < 5e-3


@pytest.mark.parametrize("m,k,p", [(6, 1, 2), (9, 2, 3.5), (12, 0, 5.0)])
def test_energy_quadrature_vs_closed_form(m, k, p):
    prm = PhiParams(m, k, p)
    assert_allclose(phi_energy(prm), phi_energy_closed_form(prm), rtol=1e-10)


def test_energy_requires_sobolev_range():
    with pytest.raises(SphereOracleError):
        phi_energy(PhiParams(5, 3, 2))               # k = m - p
    with pytest.raises(SphereOracleError):
        phi_energy_closed_form(PhiParams(6, 3, 3))


def test_params_validation():
    for bad in [(1, 0, 2), (5, 5, 2), (5, -1, 2), (5, 0, 1.9), (4, 3, 2)]:
        with pytest.raises(SphereOracleError):
            PhiParams(*bad)


def test_sphere_volume():
    assert_allclose(sphere_volume(1), 2 * math.pi)
    assert_allclose(sphere_volume(2), 4 * math.pi)
    assert_allclose(sphere_volume(3), 2 * math.pi ** 2)


def test_hersch_bound():
    assert_allclose(hersch_bound(3, 3, 2 * math.pi ** 2), 3 * (2 * math.pi ** 2) ** (2 / 3))
    assert_allclose(hersch_bound(2, 2, 4 * math.pi), 8 * math.pi)
    with pytest.raises(ValueError):
        hersch_bound(2, 1.5, 1.0)


def test_regularity_thresholds():
    assert regularity_thresholds(5, 2)["d"] == 7
    assert regularity_thresholds(5, 2)["smooth"]
    r = regularity_thresholds(12, 2)
    assert not r["smooth"] and r["singular_dim_bound"] == 5
    assert regularity_thresholds(12, 5)["d"] == 3 + math.floor(5 + 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.floats(2.0, 10.0))
def test_regularity_criteria_consistent(m, p):
    r = regularity_thresholds(m, p)
    assert r["smooth"] == (r["singular_dim_bound"] < 0)
