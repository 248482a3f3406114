"""Acceptance experiments, shared by the test suite and the ``verify`` subcommand.

Each criterion returns a :class:`CriterionResult`; tolerances and runtime
limits are fixed here and never relaxed by callers.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import (DensityPair, assemble_mass, assemble_stiffness, build_flat_torus_mesh,
                   build_sphere_mesh, conformal_pair, conformal_pencil)
from .optimizer import AscentConfig, cluster_data, clarke_supergradient, maximize, \
    min_norm_direction, project_to_box
from .pharmonic import identity_map, p_energy, p_tension_residual, stability_check
from .sphere import (INFINITE, PhiParams, SphereOracleError, hersch_bound, index_q_ell,
                     jacobi_alpha, sturm_liouville_index, total_index)
from .spectrum import cluster_of, normalized_eigenvalue, solve_lowest, spectrum
from .tensor import (align_isometry, block_norm_check, hs_norm, powers_stormer_check,
                     random_orthogonal, random_projector)

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_all", "index_grid"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return "criterion %2d %s  %-38s %7.2fs" % (self.number, status, self.title, self.runtime)


def _rel(a, b):
    return abs(a - b) / abs(b)


def criterion_1():
    """Round-sphere spectrum at refinement 5."""
    t0 = time.perf_counter()
    mesh = build_sphere_mesh(2, 5)
    res = spectrum(mesh, DensityPair.uniform(mesh), 10)
    lam = res.eigenvalues
    c1 = cluster_of(res, 1)
    elapsed = time.perf_counter() - t0
    ok = (_rel(lam[1], 2.0) <= 0.01 and len(c1) == 3 and _rel(lam[4], 6.0) <= 0.02
          and elapsed < 30.0)
    return ok, {"n_vertices": mesh.n_vertices, "lambda_1": lam[1], "cluster_1": c1,
                "lambda_4": lam[4], "eigenvalues": lam[:10]}


def criterion_2():
    """Hersch bound attained by the uniform pair."""
    mesh = build_sphere_mesh(2, 5)
    val = normalized_eigenvalue(mesh, DensityPair.uniform(mesh), 1, 2.0)
    bound = hersch_bound(2, 2.0, 4 * math.pi)
    return _rel(val, bound) <= 0.015, {"lambda_bar": val, "bound": bound,
                                       "relative_gap": _rel(val, bound)}


def criterion_3():
    """Conformal rescaling identity on S^3."""
    mesh = build_sphere_mesh(3, 3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        rho = np.exp(rng.uniform(-1.0, 1.0, mesh.n_simplices))
        pair = conformal_pair(mesh, rho)
        K1, M1 = assemble_stiffness(mesh, pair.alpha), assemble_mass(mesh, pair.mu)
        K2, M2 = conformal_pencil(mesh, rho)
        for A, B in ((K1, K2), (M1, M2)):
            worst = max(worst, float(np.linalg.norm((A - B).data) / np.linalg.norm(B.data)))
    return worst <= 1e-12, {"max_relative_difference": worst}


def criterion_4(p: float = 4.0, k: int = 2):
    """Supergradient against central differences on the flat torus."""
    mesh = build_flat_torus_mesh(2, 6)
    rng = np.random.default_rng(4)
    nt = mesh.n_simplices
    pair = DensityPair(rng.uniform(0.5, 1.5, nt), rng.uniform(0.5, 1.5, nt))
    data = cluster_data(mesh, pair, k, p, pin_alpha=False)
    if data.dim != 1:
        return False, {"error": "lambda_k is not simple", "cluster": data.indices}
    res = solve_lowest(*_pencil(mesh, pair), k + 2)
    gap = min(res.eigenvalues[k] - res.eigenvalues[k - 1],
              res.eigenvalues[k + 1] - res.eigenvalues[k]) / res.eigenvalues[k]
    g = clarke_supergradient(mesh, pair, k, p, data=data)
    worst = 0.0
    for _ in range(50):
        da, dm = rng.standard_normal(nt), rng.standard_normal(nt)
        unit = np.sqrt(np.sum(mesh.volumes * (da ** 2 + dm ** 2)))
        da, dm = da / unit, dm / unit
        an = g.dot(mesh, da, dm)
        for h in (1e-3, 1e-4, 1e-5, 1e-6):
            fp = normalized_eigenvalue(mesh, DensityPair(pair.alpha + h * da, pair.mu + h * dm), k, p)
            fm = normalized_eigenvalue(mesh, DensityPair(pair.alpha - h * da, pair.mu - h * dm), k, p)
            worst = max(worst, abs((fp - fm) / (2 * h) - an) / abs(an))
    return worst <= 1e-4, {"max_relative_error": worst, "k": k, "p": p, "relative_gap": gap}


def _pencil(mesh, pair):
    return assemble_stiffness(mesh, pair.alpha), assemble_mass(mesh, pair.mu)


def criterion_5(refinement: int = 3, starts: int = 10, iters: int = 30):
    """Ascent from perturbed starts; criticality of the uniform pair."""
    t0 = time.perf_counter()
    mesh = build_sphere_mesh(2, refinement)
    cfg = AscentConfig(k=1, p=2.0, pin_alpha=True, max_iters=iters)
    rng = np.random.default_rng(5)
    bound = 8 * math.pi * 1.02
    monotone, finals = True, []
    for _ in range(starts):
        mu = np.exp(0.3 * rng.standard_normal(mesh.n_simplices))
        out = maximize(mesh, cfg, DensityPair(np.ones(mesh.n_simplices), mu))
        values = np.array([r["value"] for r in out.trajectory])
        monotone &= bool(np.all(np.diff(values) >= 0))
        finals.append(float(values[-1]))
    start = project_to_box(mesh, DensityPair.uniform(mesh), 2.0, cfg.epsilon0, pin_alpha=True)
    d0 = min_norm_direction(mesh, start, 1, 2.0, pin_alpha=True).norm(mesh)
    elapsed = time.perf_counter() - t0
    ok = monotone and max(finals) <= bound and d0 < 1e-6 and elapsed < 300.0
    return ok, {"monotone": monotone, "max_final_over_8pi": max(finals) / (8 * math.pi),
                "direction_norm_at_uniform": d0, "refinement": refinement}


def criterion_6():
    """Identity map of S^2 as a harmonic map."""
    res, mesh5, u5 = {}, None, None
    for r in (3, 4, 5):
        mesh = build_sphere_mesh(2, r)
        u = identity_map(mesh)
        res[r] = p_tension_residual(mesh, u, 2.0)[1]
        mesh5, u5 = mesh, u
    energy = p_energy(mesh5, u5, 2.0)
    st = stability_check(mesh5, u5, 2.0)
    ok = (res[3] / res[5] >= 3.0 and _rel(energy, 8 * math.pi) <= 0.01
          and abs(st["lambda1"] - 1.0) <= 0.02)
    return ok, {"residuals": res, "reduction": res[3] / res[5], "energy": energy,
                "lambda1": st["lambda1"], "index": st["index"]}


def index_grid(ms=range(7, 21), ks=range(0, 6), ps=(2.0, 2.5, 3.0)):
    for m in ms:
        for k in ks:
            for p in ps:
                try:
                    yield PhiParams(m, k, p)
                except SphereOracleError:
                    continue


def criterion_7(N: int = 2000):
    """Index counting formula against the Sturm-Liouville discretization."""
    t0 = time.perf_counter()
    mismatches, cases = [], 0
    for P in index_grid():
        a = jacobi_alpha(P)
        if a is INFINITE:
            continue
        for ell in range(0, math.ceil(a) + 1):
            cases += 1
            i1, i2 = index_q_ell(a, ell), sturm_liouville_index(P, ell, N)
            if i1 != i2:
                mismatches.append((P.m, P.k, P.p, ell, i1, i2))
    elapsed = time.perf_counter() - t0
    return not mismatches and elapsed < 120.0, {"cases": cases, "mismatches": mismatches}


def criterion_8():
    """Maximizer range implies small index; infinite root below (1 + sqrt p)^2."""
    bad, in_range = [], 0
    for P in index_grid():
        rep = total_index(P)
        infinite = rep.alpha_root is INFINITE
        if infinite != (P.n < (1 + math.sqrt(P.p)) ** 2):
            bad.append(("infinite-marker", P.m, P.k, P.p))
        if rep.maximizer_range:
            in_range += 1
            if infinite or rep.total > P.k + 2 or P.n < 2 * (P.p + 1) or rep.alpha_root > 2:
                bad.append(("maximizer-range", P.m, P.k, P.p))
    return not bad, {"maximizer_cases": in_range, "violations": bad}


def criterion_9(cases: int = 1000):
    """Powers-Stormer, block inequality and isometry alignment sweeps."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    ps_bad = blk_bad = 0
    worst_align = 0.0
    for _ in range(cases):
        n, r = int(rng.integers(2, 17)), int(rng.integers(2, 17))
        A = rng.standard_normal((r, n))
        B = A + 10.0 ** rng.uniform(-6, 0) * rng.standard_normal((r, n))
        ps_bad += not powers_stormer_check(A, B)["holds"]
        T = rng.standard_normal((n, n))
        blk_bad += not block_norm_check(T, random_projector(n, rng))["holds"]
        F1 = rng.standard_normal((r, n))
        F2 = random_orthogonal(r, rng) @ F1
        worst_align = max(worst_align, hs_norm(align_isometry(F1, F2) @ F1 - F2) / hs_norm(F1))
    elapsed = time.perf_counter() - t0
    ok = ps_bad == 0 and blk_bad == 0 and worst_align <= 1e-8 and elapsed < 60.0
    return ok, {"powers_stormer_violations": ps_bad, "block_violations": blk_bad,
                "max_align_residual": worst_align}


def criterion_10(samples: int = 100):
    """Monotonicity of lambda_bar in p on volume-normalized spheres."""
    rng = np.random.default_rng(10)
    sweeps = []
    # on S^2 the window 2 < p <= m is empty, so S^2 is swept on (2, 6]; S^3 uses 2 < p <= 3
    for m, ref, pmax in ((2, 2, 6.0), (3, 1, 3.0)):
        mesh = build_sphere_mesh(m, ref)
        mesh = mesh.scaled(mesh.total_volume ** (-1.0 / m))
        violations = 0
        for _ in range(samples):
            nt = mesh.n_simplices
            pair = DensityPair(np.exp(rng.normal(0, 0.7, nt)), np.exp(rng.normal(0, 0.7, nt)))
            k = int(rng.integers(1, 4))
            p1, p2 = np.sort(rng.uniform(2.0, pmax, 2))
            if p1 == p2 or p1 <= 2.0:
                continue
            lam = spectrum(mesh, pair, k + 1).eigenvalues[k]
            v1 = normalized_eigenvalue(mesh, pair, k, p1, value=lam)
            v2 = normalized_eigenvalue(mesh, pair, k, p2, value=lam)
            violations += v1 > v2 * (1 + 1e-12)
        sweeps.append({"m": m, "p_max": pmax, "violations": int(violations)})
    return all(s["violations"] == 0 for s in sweeps), {"sweeps": sweeps}


CRITERIA = {
    1: ("round-sphere spectrum", criterion_1),
    2: ("normalized eigenvalue vs 8 pi", criterion_2),
    3: ("conformal identity on S^3", criterion_3),
    4: ("supergradient vs finite differences", criterion_4),
    5: ("optimizer soundness", criterion_5),
    6: ("identity map harmonicity", criterion_6),
    7: ("index oracle vs Sturm-Liouville", criterion_7),
    8: ("maximizer threshold reproduction", criterion_8),
    9: ("tensor property sweeps", criterion_9),
    10: ("p-monotonicity of lambda_bar", criterion_10),
}


def run_criterion(number: int) -> CriterionResult:
    title, fn = CRITERIA[number]
    t0 = time.perf_counter()
    passed, details = fn()
    return CriterionResult(number, title, bool(passed), time.perf_counter() - t0, details)


def run_all(numbers=None) -> list:
    return [run_criterion(n) for n in (numbers or sorted(CRITERIA))]
