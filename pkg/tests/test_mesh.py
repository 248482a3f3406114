import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from eigopt.mesh import (DensityPair, MeshError, Mesh, assemble_mass, assemble_stiffness,
                         build_flat_torus_mesh, build_sphere_mesh, conformal_pair,
                         conformal_pencil, lp_norm)


@pytest.mark.parametrize("r", range(4))
def test_icosphere_counts(r):
    mesh = build_sphere_mesh(2, r)
    assert mesh.n_vertices == 10 * 4 ** r + 2
    assert mesh.n_simplices == 20 * 4 ** r
    assert mesh.is_closed()
    assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, atol=1e-14)


def test_icosphere_area_converges():
    gaps = [abs(build_sphere_mesh(2, r).total_volume - 4 * math.pi) for r in (2, 3, 4)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] / gaps[2] > 3.5          # second-order convergence


def test_s3_mesh():
    mesh = build_sphere_mesh(3, 2)
    assert mesh.is_closed()
    assert mesh.n_simplices == 16 * 8 ** 2
    n_faces = np.unique(mesh.faces(), axis=0).shape[0]
    assert mesh.n_vertices - mesh.edges().shape[0] + n_faces - mesh.n_simplices == 0
    gaps = [abs(build_sphere_mesh(3, r).total_volume / (2 * math.pi ** 2) - 1) for r in (1, 2, 3)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_sphere_refinement_cap():
    with pytest.raises(MeshError):
        build_sphere_mesh(3, 6)
    with pytest.raises(MeshError):
        build_sphere_mesh(4, 1)


@pytest.mark.parametrize("m,n", [(2, 3), (2, 8), (3, 3), (3, 4)])
def test_torus_volume_exact(m, n):
    mesh = build_flat_torus_mesh(m, n)
    assert_allclose(mesh.total_volume, (2 * math.pi) ** m, rtol=1e-13)
    assert mesh.is_closed()
    assert mesh.n_vertices == n ** m


def test_torus_rejects_bad_input():
    with pytest.raises(MeshError):
        build_flat_torus_mesh(2, 2)
    with pytest.raises(MeshError):
        build_flat_torus_mesh(4, 4)


def test_degenerate_simplex_rejected():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    with pytest.raises(MeshError):
        Mesh(2, v, np.array([[0, 1, 2]]))


def test_stiffness_annihilates_constants(sphere2, rng):
    alpha = rng.uniform(0.1, 2.0, sphere2.n_simplices)
    K = assemble_stiffness(sphere2, alpha)
    assert_allclose(K @ np.ones(sphere2.n_vertices), 0.0, atol=1e-13)
    assert abs(K - K.T).max() < 1e-14


def test_stiffness_energy_of_linear_function():
    # on a flat torus the P1 interpolant of a trigonometric function
    mesh = build_flat_torus_mesh(2, 64)
    f = np.sin(mesh.vertices[:, 0])
    K = assemble_stiffness(mesh, np.ones(mesh.n_simplices))
    assert_allclose(f @ K @ f, 2 * math.pi ** 2, rtol=2e-3)


def test_mass_total(sphere2, rng):
    mu = rng.uniform(0, 3, sphere2.n_simplices)
    one = np.ones(sphere2.n_vertices)
    for lumped in (False, True):
        M = assemble_mass(sphere2, mu, lumped=lumped)
        assert_allclose(one @ M @ one, np.sum(mu * sphere2.volumes), rtol=1e-13)


def test_conformal_pencil_matches_pair(rng):
    mesh = build_sphere_mesh(3, 1)
    rho = np.exp(rng.normal(size=mesh.n_simplices))
    pair = conformal_pair(mesh, rho)
    K, M = conformal_pencil(mesh, rho)
    assert abs(K - assemble_stiffness(mesh, pair.alpha)).max() <= 1e-12 * abs(K).max()
    assert abs(M - assemble_mass(mesh, pair.mu)).max() <= 1e-12 * abs(M).max()


def test_scaled_mesh_volume(sphere2):
    assert_allclose(sphere2.scaled(2.0).total_volume, 4 * sphere2.total_volume)


def test_density_pair_validation(sphere2):
    n = sphere2.n_simplices
    with pytest.raises(MeshError):
        DensityPair(-np.ones(n), np.ones(n))
    with pytest.raises(MeshError):
        DensityPair(np.ones(n), np.zeros(n))
    with pytest.raises(MeshError):
        DensityPair(np.ones(n), np.ones(n)).validate(build_sphere_mesh(2, 1))


@settings(max_examples=30, deadline=None)
@given(st.floats(1.05, 20.0), st.floats(1.05, 20.0))
def test_lp_norm_monotone_on_probability_space(q1, q2):
    mesh = build_sphere_mesh(2, 1)
    mesh = mesh.scaled(mesh.total_volume ** -0.5)
    f = np.linspace(0.1, 3.0, mesh.n_simplices)
    lo, hi = sorted((q1, q2))
    assert lp_norm(mesh, f, lo) <= lp_norm(mesh, f, hi) * (1 + 1e-12)
    assert lp_norm(mesh, f, hi) <= lp_norm(mesh, f, np.inf) * (1 + 1e-12)


def test_cell_mean_square_matches_mass(sphere2, rng):
    f = rng.normal(size=sphere2.n_vertices)
    for lumped in (False, True):
        M = assemble_mass(sphere2, np.ones(sphere2.n_simplices), lumped=lumped)
        ms = sphere2.cell_mean_square(f, lumped=lumped)
        assert_allclose(np.sum(ms * sphere2.volumes), f @ M @ f, rtol=1e-12)
