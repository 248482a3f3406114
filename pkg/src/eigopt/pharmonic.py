"""Discrete p-harmonic maps into round spheres and their critical density pairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import DensityPair, Mesh, MeshError, assemble_mass, assemble_stiffness
from .spectrum import solve_lowest, pencil

log = logging.getLogger(__name__)

__all__ = [
    "SphereMap",
    "FlowConfig",
    "CriticalPairReport",
    "FlowError",
    "p_energy",
    "energy_density",
    "critical_pair",
    "p_tension_residual",
    "flow_to_critical",
    "stability_check",
    "monotonicity_profile",
    "identity_map",
    "radial_map",
]

UNIT_TOL = 1e-12


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class SphereMap:
    """Vertex values u_i on the unit sphere S^n in R^(n+1)."""

    values: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.values, dtype=float)
        if u.ndim != 2 or u.shape[1] < 1:
            raise ValueError("sphere map values must be an (nv, n+1) array")
        if not np.all(np.isfinite(u)):
            raise ValueError("sphere map values must be finite")
        if np.max(np.abs(np.linalg.norm(u, axis=1) - 1.0)) > UNIT_TOL:
            raise ValueError("sphere map values must have unit norm")
        object.__setattr__(self, "values", u)

    @property
    def target_dimension(self) -> int:
        return self.values.shape[1] - 1

    @classmethod
    def normalized(cls, values) -> "SphereMap":
        u = np.asarray(values, dtype=float)
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero vector")
        return cls(u / norms)


def identity_map(mesh: Mesh) -> SphereMap:
    """Inclusion of an embedded sphere mesh as a map to the unit sphere."""
    return SphereMap.normalized(mesh.vertices)


def _displacements(mesh: Mesh, points: np.ndarray, center: np.ndarray) -> np.ndarray:
    d = points - center
    if mesh.periods is not None:
        d = d - mesh.periods * np.round(d / mesh.periods)
    return d


def radial_map(mesh: Mesh, center: int) -> SphereMap:
    """x -> (x - x_c)/|x - x_c| into S^(D-1); the center vertex takes an arbitrary value."""
    d = _displacements(mesh, mesh.vertices, mesh.vertices[center])
    r = np.linalg.norm(d, axis=1)
    d[r == 0] = 0.0
    d[r == 0, 0] = 1.0
    return SphereMap.normalized(d)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, SphereMap) else np.asarray(u, dtype=float)


def energy_density(mesh: Mesh, u) -> np.ndarray:
    """Per-simplex |du|^2 (squared Frobenius norm of the constant differential)."""
    du = mesh.differential(_values(u))
    return np.einsum("tcd,tcd->t", du, du)


def _powers(sq: np.ndarray, p: float):
    """(|du|^(p-2), |du|^p) with the p = 2 convention alpha = 1."""
    if p == 2:
        return np.ones_like(sq), sq.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(sq > 0, sq ** ((p - 2) / 2), 0.0)
    return a, sq ** (p / 2)


def _check_p(p):
    if not p >= 2:
        raise ValueError("p must be at least 2")


def p_energy(mesh: Mesh, u, p: float) -> float:
    _check_p(p)
    return float(np.sum(energy_density(mesh, u) ** (p / 2) * mesh.volumes))


def critical_pair(mesh: Mesh, u, p: float) -> DensityPair:
    """(alpha, mu) = (|du|^(p-2), |du|^p) per simplex."""
    _check_p(p)
    sq = energy_density(mesh, u)
    if not np.any(sq > 0):
        raise FlowError("map has zero differential everywhere")
    a, m = _powers(sq, p)
    return DensityPair(a, m)


def p_tension_residual(mesh: Mesh, u, p: float, lumped: bool = False):
    """Weak residual r = K(|du|^(p-2)) u - M(|du|^p) u.

    Returns (r, relative norm, tangential part).  The relative norm is
    |r| / |M(|du|^p) u| in the Frobenius sense; it is 0 for constant maps.
    At a discrete critical point only the tangential part vanishes.
    """
    _check_p(p)
    U = _values(u)
    sq = energy_density(mesh, U)
    a, m = _powers(sq, p)
    if not np.any(sq > 0):
        z = np.zeros_like(U)
        return z, 0.0, z
    r = assemble_stiffness(mesh, a) @ U - assemble_mass(mesh, m, lumped=lumped) @ U
    ref = np.linalg.norm(assemble_mass(mesh, m, lumped=lumped) @ U)
    tang = r - np.sum(r * U, axis=1, keepdims=True) * U
    return r, float(np.linalg.norm(r) / ref), tang


@dataclass
class FlowConfig:
    max_steps: int = 500
    tol: float = 1e-6
    step0: float = 0.5
    max_backtracks: int = 30
    k: int = 1
    stability_tol: float = 1e-2
    lumped: bool = False


@dataclass
class CriticalPairReport:
    alpha: np.ndarray
    mu: np.ndarray
    energy: float
    tension_residual: float
    tangential_residual: float
    lambda_k: float
    lambda1: float
    stable: bool
    index: int
    steps: int
    energies: list

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "tension_residual": self.tension_residual,
            "tangential_residual": self.tangential_residual,
            "lambda_k": self.lambda_k,
            "lambda1": self.lambda1,
            "stable": self.stable,
            "index": self.index,
            "steps": self.steps,
        }


def _vertex_volumes(mesh: Mesh) -> np.ndarray:
    m = mesh.dimension
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.simplices.ravel(), np.repeat(mesh.volumes / (m + 1), m + 1))
    return w


def flow_to_critical(mesh: Mesh, u0, p: float, config: FlowConfig | None = None):
    """Projected p-energy descent with backtracking; returns (SphereMap, report).

    Steps move each vertex along minus the tangential residual scaled by
    its lumped volume, then renormalize to the sphere.
    """
    cfg = config or FlowConfig()
    _check_p(p)
    u = u0 if isinstance(u0, SphereMap) else SphereMap(u0)
    U = u.values.copy()
    energy = p_energy(mesh, U, p)
    energies = [energy]
    wv = _vertex_volumes(mesh)[:, None]
    step = cfg.step0
    steps = 0
    res = 0.0
    if energy == 0.0:
        return SphereMap(U), _report(mesh, U, p, cfg, 0.0, energies, 0)
    for steps in range(cfg.max_steps):
        _, res, tang = p_tension_residual(mesh, U, p, lumped=cfg.lumped)
        if _relative(mesh, U, p, tang, cfg) < cfg.tol:
            break
        d = -tang / wv
        t = step
        for _ in range(cfg.max_backtracks):
            cand = U + t * d
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            e = p_energy(mesh, cand, p)
            if not np.isfinite(e):
                raise FlowError("non-finite energy during the flow")
            if e <= energy:
                break
            t *= 0.5
        else:
            raise FlowError("energy increased after the maximum number of backtracks")
        if energy - e <= 1e-15 * max(energy, 1.0):
            U, energy = cand, e
            energies.append(energy)
            _, res, _ = p_tension_residual(mesh, U, p, lumped=cfg.lumped)
            steps += 1
            break
        U, energy = cand, e
        energies.append(energy)
        step = min(2.0 * t, 1e3 * cfg.step0)
    else:
        steps = cfg.max_steps
        _, res, _ = p_tension_residual(mesh, U, p, lumped=cfg.lumped)
    return SphereMap(U), _report(mesh, U, p, cfg, res, energies, steps)


def _relative(mesh, U, p, tang, cfg):
    _, m = _powers(energy_density(mesh, U), p)
    return float(np.linalg.norm(tang) / np.linalg.norm(assemble_mass(mesh, m, lumped=cfg.lumped) @ U))


def _report(mesh, U, p, cfg, res, energies, steps):
    sq = energy_density(mesh, U)
    a, m = _powers(sq, p)
    if not np.any(sq > 0):
        return CriticalPairReport(a, m, 0.0, 0.0, 0.0, np.nan, np.nan, False, 0, steps, energies)
    tang = p_tension_residual(mesh, U, p, lumped=cfg.lumped)[2]
    st = stability_check(mesh, U, p, tol=cfg.stability_tol, lumped=cfg.lumped,
                         min_count=cfg.k + 2)
    return CriticalPairReport(alpha=a, mu=m, energy=float(np.sum(m * mesh.volumes)),
                              tension_residual=float(res),
                              tangential_residual=_relative(mesh, U, p, tang, cfg),
                              lambda_k=float(st["eigenvalues"][cfg.k]),
                              lambda1=st["lambda1"], stable=st["stable"], index=st["index"],
                              steps=steps, energies=energies)


def stability_check(mesh: Mesh, u, p: float, tol: float = 1e-2, lumped: bool = False,
                    min_count: int = 2) -> dict:
    """Spectral stability of the pair (|du|^(p-2), |du|^p): lambda_1 >= 1 - tol.

    The index counts pencil eigenvalues below 1 - tol, so a stable map has
    index 1 (the constants).
    """
    pair = critical_pair(mesh, u, p)
    K, M = pencil(mesh, pair, lumped=lumped)
    n = K.shape[0]
    count = min(max(min_count, 2) + 4, n)
    while True:
        eig = solve_lowest(K, M, count)
        lam = eig.eigenvalues
        if lam[-1] >= 1 - tol or count == n:
            break
        count = min(2 * count, n)
    index = int(np.sum(lam < 1 - tol))
    return {"stable": bool(lam[1] >= 1 - tol), "lambda1": float(lam[1]), "index": index,
            "eigenvalues": lam}


def monotonicity_profile(mesh: Mesh, u, p: float, center: int, radii) -> np.ndarray:
    """r^(p-m) E_p[u; B_r(x_c)] over Euclidean balls, cells selected by centroid."""
    _check_p(p)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise ValueError("radii must be positive and increasing")
    c = mesh.vertices[center]
    if mesh.coords is not None:
        cent = mesh.coords.mean(axis=1)
    else:
        cent = mesh.vertices[mesh.simplices].mean(axis=1)
    dist = np.linalg.norm(_displacements(mesh, cent, c), axis=1)
    if mesh.periods is not None:
        # stay one cell away from the cut locus of the periodic displacement
        pts = mesh.coords
        diam = float(np.max(np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=-1)))
        limit = 0.5 * float(np.min(mesh.periods)) - diam
    else:
        # a ball through the hemisphere would reach the antipodal region
        limit = float(np.max(np.linalg.norm(mesh.vertices - c, axis=1))) / np.sqrt(2.0)
    if radii[-1] > limit:
        raise MeshError("ball radius exceeds the admissible scale")
    e = energy_density(mesh, u) ** (p / 2) * mesh.volumes
    m = mesh.dimension
    return np.array([r ** (p - m) * float(np.sum(e[dist <= r])) for r in radii])
