import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from eigopt.mesh import MeshError, build_flat_torus_mesh, build_sphere_mesh
from eigopt.pharmonic import (FlowConfig, FlowError, SphereMap, critical_pair, energy_density,
                              flow_to_critical, identity_map, monotonicity_profile, p_energy,
                              p_tension_residual, radial_map, stability_check)


def _winding(mesh, n=2):
    x, y, z = mesh.vertices.T
    th = np.arccos(np.clip(z, -1, 1))
    ph = np.arctan2(y, x)
    return SphereMap.normalized(np.c_[np.sin(th) * np.cos(n * ph),
                                      np.sin(th) * np.sin(n * ph), np.cos(th)])


def test_sphere_map_validation():
    with pytest.raises(ValueError):
        SphereMap(np.array([[1.0, 1.0]]))
    with pytest.raises(ValueError):
        SphereMap.normalized(np.zeros((2, 3)))
    assert SphereMap(np.eye(3)).target_dimension == 2


def test_constant_map(sphere2):
    u = SphereMap(np.tile([0.0, 0.0, 1.0], (sphere2.n_vertices, 1)))
    assert p_energy(sphere2, u, 3.0) == 0.0
    r, rel, tang = p_tension_residual(sphere2, u, 3.0)
    assert rel == 0.0 and not np.any(r) and not np.any(tang)
    with pytest.raises(FlowError):
        stability_check(sphere2, u, 2.0)
    _, rep = flow_to_critical(sphere2, u, 2.0)
    assert rep.energy == 0.0 and rep.steps == 0


def test_identity_energy_density(sphere3):
    # |d id|^2 = 2 on the unit 2-sphere, up to discretization
    assert_allclose(energy_density(sphere3, identity_map(sphere3)), 2.0, rtol=5e-2)
    assert_allclose(p_energy(sphere3, identity_map(sphere3), 2.0), 8 * math.pi, rtol=5e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(2.0, 6.0))
def test_energy_scaling_law(s, p):
    mesh = build_flat_torus_mesh(2, 6)
    u = radial_map(mesh, 7)
    assert_allclose(p_energy(mesh.scaled(s), u, p), s ** (2 - p) * p_energy(mesh, u, p),
                    rtol=1e-10)


def test_critical_pair_powers(sphere2):
    u = identity_map(sphere2)
    sq = energy_density(sphere2, u)
    pair = critical_pair(sphere2, u, 4.0)
    assert_allclose(pair.alpha, sq)
    assert_allclose(pair.mu, sq ** 2)
    assert np.all(critical_pair(sphere2, u, 2.0).alpha == 1.0)
    with pytest.raises(ValueError):
        critical_pair(sphere2, u, 1.5)


def test_identity_residual_decreases_with_refinement():
    tang = []
    for r in (2, 3, 4):
        mesh = build_sphere_mesh(2, r)
        tang.append(np.abs(p_tension_residual(mesh, identity_map(mesh), 3.0)[2]).max())
    assert tang[0] > tang[1] > tang[2]
    assert tang[1] / tang[2] > 4


def test_identity_is_stable(sphere3):
    st_ = stability_check(sphere3, identity_map(sphere3), 2.0)
    assert st_["stable"] and st_["index"] == 1
    assert_allclose(st_["lambda1"], 1.0, rtol=1e-2)


def test_winding_map_is_unstable(sphere3):
    st_ = stability_check(sphere3, _winding(sphere3), 2.0)
    assert not st_["stable"]
    assert st_["index"] > 1
    assert st_["lambda1"] < 0.6


def test_flow_energy_monotone(sphere2, rng):
    u0 = SphereMap.normalized(sphere2.vertices + 0.1 * rng.normal(size=sphere2.vertices.shape))
    _, rep = flow_to_critical(sphere2, u0, 2.0, FlowConfig(max_steps=40))
    e = rep.energies
    assert all(b <= a for a, b in zip(e, e[1:]))
    assert e[-1] < e[0]
    assert rep.summary()["steps"] == rep.steps


def test_flow_converges_from_perturbed_identity(sphere2, rng):
    u0 = SphereMap.normalized(sphere2.vertices + 0.05 * rng.normal(size=sphere2.vertices.shape))
    u, rep = flow_to_critical(sphere2, u0, 3.0, FlowConfig(max_steps=2000, tol=1e-5))
    assert rep.tangential_residual < 1e-5
    assert rep.stable


def test_monotonicity_on_torus():
    mesh = build_flat_torus_mesh(3, 16)
    u = radial_map(mesh, 0)
    radii = [1.0, 1.5, 2.0]
    for p in (2.0, 2.5):
        prof = monotonicity_profile(mesh, u, p, 0, radii)
        assert np.all(np.diff(prof) > 0)
        assert prof[-1] < 2 ** (p / 2) * 4 * math.pi / (3 - p)
    prof = monotonicity_profile(mesh, u, 2.0, 0, radii)
    assert prof[-1] / (2 * 4 * math.pi) > 0.9


def test_monotonicity_rejects_large_radius(torus6):
    u = radial_map(torus6, 0)
    with pytest.raises(MeshError):
        monotonicity_profile(torus6, u, 2.0, 0, [1.0, 3.2])
    with pytest.raises(ValueError):
        monotonicity_profile(torus6, u, 2.0, 0, [1.0, 0.5])


def test_sphere_monotonicity_small_balls(sphere3):
    u = identity_map(sphere3)
    prof = monotonicity_profile(sphere3, u, 2.0, 0, [0.4, 0.6])
    # area of a small geodesic cap times |d id|^2 = 2, nearly 2 pi r^2 * r^0
    assert_allclose(prof / (2 * math.pi * np.array([0.4, 0.6]) ** 2), 1.0, rtol=0.1)
