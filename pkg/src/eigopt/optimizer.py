"""Projected nonsmooth ascent of the normalized eigenvalue over density pairs.

The supergradient of lambda_bar_{k,p}(alpha, mu) at a pair is built from the
eigenfunctions of the cluster containing lambda_k.  Gradients are per-cell
densities paired with directions through the volume-weighted L2 product

    <G, d> = sum_T vol(T) (G_alpha[T] d_alpha[T] + G_mu[T] d_mu[T]).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .mesh import DensityPair, Mesh, lp_norm
from .spectrum import (DEFAULT_CLUSTER_TOL, SolverError, SpectralResult, exponent_q,
                       pencil, solve_lowest)

log = logging.getLogger(__name__)

__all__ = [
    "GradientPair",
    "ClusterData",
    "AscentConfig",
    "AscentState",
    "AscentResult",
    "OptimizerError",
    "cluster_data",
    "clarke_supergradient",
    "min_norm_direction",
    "project_to_box",
    "maximize",
]


class OptimizerError(RuntimeError):
    pass


@dataclass
class GradientPair:
    """Ascent direction candidate for lambda_bar, one value per simplex."""

    d_alpha: np.ndarray
    d_mu: np.ndarray
    weights: np.ndarray | None = None  # trace-one PSD matrix on the cluster basis

    def __post_init__(self):
        if not (np.all(np.isfinite(self.d_alpha)) and np.all(np.isfinite(self.d_mu))):
            raise OptimizerError("non-finite gradient entries")

    def dot(self, mesh: Mesh, da, dmu) -> float:
        v = mesh.volumes
        return float(np.sum(v * (self.d_alpha * da + self.d_mu * dmu)))

    def norm(self, mesh: Mesh) -> float:
        return float(np.sqrt(max(self.dot(mesh, self.d_alpha, self.d_mu), 0.0)))


@dataclass
class ClusterData:
    """Everything the supergradient needs about the lambda_k eigenspace."""

    k: int
    p: float
    lam: float
    value: float
    indices: list
    vectors: np.ndarray          # (nv, d), each with integral phi^2 dmu = 1
    grad_gram: np.ndarray        # (nt, d, d) <d phi_a, d phi_b> per cell
    mean_prod: np.ndarray        # (nt, d, d) cell mean of phi_a phi_b
    alpha_norm: float
    mass: float
    pin_alpha: bool

    @property
    def dim(self) -> int:
        return len(self.indices)


def _cell_products(mesh: Mesh, X: np.ndarray, lumped: bool):
    m = mesh.dimension
    loc = X[mesh.simplices]                               # (nt, m+1, d)
    sq = np.einsum("tja,tjb->tab", loc, loc)
    if lumped:
        return sq / (m + 1)
    s = loc.sum(axis=1)
    return (sq + np.einsum("ta,tb->tab", s, s)) / ((m + 1) * (m + 2))


def cluster_data(mesh: Mesh, pair: DensityPair, k: int, p: float,
                 eig: SpectralResult | None = None, pin_alpha: bool | None = None,
                 cluster_tol: float = DEFAULT_CLUSTER_TOL, lumped: bool = False,
                 seed: int = 0, active_tol: float | None = None) -> ClusterData:
    """Solve (if needed) and extract the full cluster straddling index k.

    With ``active_tol`` every eigenvalue within a relative gap
    ``active_tol * (1 + lambda_k)`` of lambda_k joins the cluster, which turns
    the supergradient hull into an epsilon-subdifferential.
    """
    pair.validate(mesh)
    if pin_alpha is None:
        pin_alpha = p == 2
    if p == 2 and not pin_alpha:
        raise OptimizerError("p = 2 requires alpha pinned to a constant")
    K = M = None
    count = k + 4
    while True:
        if eig is None or len(eig) < count:
            if K is None:
                K, M = pencil(mesh, pair, lumped=lumped)
            count = min(count, K.shape[0])
            eig = solve_lowest(K, M, count, seed=seed, cluster_tol=cluster_tol)
        cl = list([c for c in eig.clusters if k in c][0])
        if active_tol is not None:
            lk = eig.eigenvalues[k]
            near = np.abs(eig.eigenvalues - lk) <= active_tol * (1 + abs(lk))
            cl = sorted(set(cl) | set(np.nonzero(near)[0].tolist()))
        if cl[-1] < len(eig) - 1 or len(eig) == mesh.n_vertices:
            break
        count = len(eig) + max(4, len(cl))
        eig = None
    lam = float(eig.eigenvalues[k])
    if not np.isfinite(lam):
        raise OptimizerError("lambda_k is infinite for this pair")
    X = eig.eigenvectors[:, cl]
    q = exponent_q(p)
    norm = lp_norm(mesh, pair.alpha, q)
    mass = float(np.sum(pair.mu * mesh.volumes))
    dphi = mesh.differential(X)                           # (nt, d, D)
    gram = np.einsum("tad,tbd->tab", dphi, dphi)
    prod = _cell_products(mesh, X, lumped)
    return ClusterData(k=k, p=p, lam=lam, value=lam * mass / norm, indices=list(cl),
                       vectors=X, grad_gram=gram, mean_prod=prod, alpha_norm=norm,
                       mass=mass, pin_alpha=pin_alpha)


def _alpha_term(data: ClusterData, pair: DensityPair) -> np.ndarray:
    q = exponent_q(data.p)
    return (pair.alpha / data.alpha_norm) ** (q - 1.0)


def _basis_gradients(data: ClusterData, pair: DensityPair):
    """G_ab with G(S) = sum_ab S_ab G_ab for trace-one S; shape (d, d, 2, nt)."""
    d = data.dim
    eye = np.eye(d)
    nt = len(pair.alpha)
    out = np.zeros((d, d, 2, nt))
    W = np.moveaxis(data.grad_gram, 0, -1)                # (d, d, nt)
    P = np.moveaxis(data.mean_prod, 0, -1)
    if not data.pin_alpha:
        c = data.mass / data.alpha_norm
        const = (data.lam / data.alpha_norm) * _alpha_term(data, pair)
        out[:, :, 0] = c * (W - eye[:, :, None] * const[None, None, :])
    out[:, :, 1] = (data.lam / data.alpha_norm) * (eye[:, :, None] - data.mass * P)
    return out


def clarke_supergradient(mesh: Mesh, pair: DensityPair, k: int, p: float,
                         eig: SpectralResult | None = None, weights=None,
                         data: ClusterData | None = None, **kwargs) -> GradientPair:
    """Per-cell supergradient of lambda_bar_{k,p} for a convex weighting of the cluster.

    With the cluster eigenfunctions rescaled so that their mean square
    against mu/mu(M) is one, and S the trace-one weight matrix,

        d_alpha = -(1/|alpha|_q) [lambda_bar (alpha/|alpha|_q)^(q-1) - |omega|^2]
        d_mu    =  (lambda_k/|alpha|_q) [1 - <phi^2>]

    where |omega|^2 and <phi^2> are the S-weighted cell gradient norms and
    cell mean squares.  ``weights`` may be a vector of convex coefficients
    (diagonal S) or a full PSD matrix; the default uses the first basis
    function only.
    """
    if data is None:
        data = cluster_data(mesh, pair, k, p, eig=eig, **kwargs)
    d = data.dim
    if d == 0:
        raise OptimizerError("empty cluster")
    S = _weights_matrix(weights, d)
    G = np.einsum("ab,abct->ct", S, _basis_gradients(data, pair))
    return GradientPair(G[0], G[1], weights=S)


def _weights_matrix(weights, d):
    if weights is None:
        S = np.zeros((d, d))
        S[0, 0] = 1.0
        return S
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        if len(w) != d:
            raise OptimizerError("weights length does not match cluster size")
        if np.any(w < -1e-12) or abs(w.sum() - 1) > 1e-9:
            raise OptimizerError("weights must be convex coefficients")
        return np.diag(w)
    if w.shape != (d, d):
        raise OptimizerError("weights matrix does not match cluster size")
    ev = np.linalg.eigvalsh((w + w.T) / 2)
    if ev.min() < -1e-10 or abs(np.trace(w) - 1) > 1e-9:
        raise OptimizerError("weights matrix must be PSD with unit trace")
    return (w + w.T) / 2


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_spectraplex(S):
    w, U = np.linalg.eigh((S + S.T) / 2)
    return (U * _project_simplex(w)) @ U.T


def min_norm_direction(mesh: Mesh, pair: DensityPair, k: int, p: float,
                       eig: SpectralResult | None = None, data: ClusterData | None = None,
                       max_inner: int = 20000, gap_tol: float = 1e-15,
                       **kwargs) -> GradientPair:
    """Minimum-norm element of the supergradient hull over trace-one PSD weights.

    Accelerated projected gradient on the spectraplex with adaptive restart;
    stops on the Frank-Wolfe duality gap.
    """
    if data is None:
        data = cluster_data(mesh, pair, k, p, eig=eig, **kwargs)
    d = data.dim
    basis = _basis_gradients(data, pair)                  # (d, d, 2, nt)
    if d == 1:
        return GradientPair(basis[0, 0, 0], basis[0, 0, 1], weights=np.ones((1, 1)))
    flat = basis.reshape(d * d, -1)
    w = np.sqrt(np.tile(mesh.volumes, 2))
    # |G(S)| = |R vec(S)| without forming the squared Gram matrix
    R = np.linalg.qr((flat * w).T, mode="r")

    def grad(S):
        return 2.0 * (R.T @ (R @ S.ravel())).reshape(d, d)

    L = 2.0 * max(np.linalg.norm(R, 2) ** 2, 1e-300)
    S = np.eye(d) / d
    Y, t = S.copy(), 1.0
    f_prev = float(np.sum((R @ S.ravel()) ** 2))
    gap = np.inf
    for _ in range(max_inner):
        S_new = _project_spectraplex(Y - grad(Y) / L)
        f_new = float(np.sum((R @ S_new.ravel()) ** 2))
        if f_new > f_prev and t > 1.0:                      # restart momentum
            t, Y = 1.0, S.copy()
            continue
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        Y = S_new + ((t - 1) / t_new) * (S_new - S)
        S, t, f_prev = S_new, t_new, f_new
        g = grad(S)
        gap = float(np.sum(g * S) - np.linalg.eigvalsh((g + g.T) / 2).min())
        if gap <= gap_tol * L or f_new <= (1e-12 * np.sqrt(L)) ** 2:
            break
    else:
        log.warning("min-norm inner solve stopped at the iteration cap (gap %.3g)", gap)
    G = np.einsum("ab,abct->ct", S, basis)
    return GradientPair(G[0], G[1], weights=S)


# ---------------------------------------------------------------------------
# feasible set X_eps with normalization

def _normalize_clipped(f, vol, lo, hi, target, power):
    """Find s with ||clip(s f, lo, hi)||_power = target and return the clipped vector."""
    def norm(s):
        g = np.clip(s * f, lo, hi)
        if np.isinf(power):
            return g.max()
        if power == 1:
            return float(np.sum(g * vol))
        return float(np.sum(g ** power * vol)) ** (1.0 / power)

    lo_s, hi_s = 1e-300, 1.0
    while norm(hi_s) < target:
        hi_s *= 2.0
        if hi_s > 1e300:
            raise OptimizerError("cannot normalize density into the box")
    if norm(lo_s) > target:
        raise OptimizerError("box lower bound exceeds the normalization")
    s = optimize.brentq(lambda s: norm(s) - target, lo_s, hi_s, xtol=1e-300, rtol=1e-15,
                        maxiter=500)
    g = np.clip(s * f, lo, hi)
    # remove the last rounding error of the root without leaving the box
    cur = norm(s)
    if np.isfinite(power) and cur > 0:
        free = (g > lo) & (g < hi)
        if np.any(free):
            if power == 1:
                g[free] += (target - cur) * g[free] / np.sum(g[free] * vol[free])
            else:
                g[free] *= (target / cur)
    return g


def project_to_box(mesh: Mesh, pair: DensityPair, p: float, epsilon: float,
                   pin_alpha: bool = False) -> DensityPair:
    """Scale-and-clip onto {alpha >= eps, mu <= 1/eps, ||alpha||_q = 1, mu(M) = 1}."""
    vol = mesh.volumes
    q = exponent_q(p)
    if pin_alpha:
        alpha = np.ones_like(pair.alpha)
    else:
        alpha = _normalize_clipped(np.maximum(pair.alpha, 0.0), vol, epsilon, np.inf, 1.0, q)
    mu = _normalize_clipped(np.maximum(pair.mu, 0.0), vol, 0.0, 1.0 / epsilon, 1.0, 1)
    return DensityPair(alpha, mu)


def in_box(mesh: Mesh, pair: DensityPair, p: float, epsilon: float, tol: float = 1e-12) -> bool:
    q = exponent_q(p)
    ok_box = pair.alpha.min() >= epsilon * (1 - 1e-12) and pair.mu.max() <= (1 + 1e-12) / epsilon
    ok_norm = (abs(lp_norm(mesh, pair.alpha, q) - 1) <= tol
               and abs(np.sum(pair.mu * mesh.volumes) - 1) <= tol)
    return bool(ok_box and ok_norm)


# ---------------------------------------------------------------------------
# ascent loop

@dataclass
class AscentConfig:
    k: int = 1
    p: float = 2.0
    epsilon0: float = 1e-2
    epsilon_floor: float = 1e-6
    max_iters: int = 200
    step0: float = 0.1
    tol: float = 1e-6
    seed: int = 0
    pin_alpha: bool | None = None
    max_backtracks: int = 12
    armijo: float = 1e-4
    lumped: bool = False
    active_tol: float = 1e-3

    def resolved_pin(self) -> bool:
        return self.p == 2 if self.pin_alpha is None else bool(self.pin_alpha)


@dataclass
class AscentState:
    pair: DensityPair
    epsilon: float
    value: float
    step: float
    history: list = field(default_factory=list)


@dataclass
class AscentResult:
    state: AscentState
    trajectory: list            # dicts: iter, value, direction_norm, epsilon
    converged: bool
    final_direction_norm: float
    diagnostics: dict


def _value(mesh, pair, cfg):
    data = cluster_data(mesh, pair, cfg.k, cfg.p, pin_alpha=cfg.resolved_pin(),
                        lumped=cfg.lumped, seed=cfg.seed, active_tol=cfg.active_tol)
    return data.value, data


def maximize(mesh: Mesh, config: AscentConfig, initial: DensityPair | None = None) -> AscentResult:
    """Projected supergradient ascent of lambda_bar_{k,p} on the box X_eps."""
    cfg = config
    pin = cfg.resolved_pin()
    eps = float(cfg.epsilon0)
    pair = DensityPair.uniform(mesh) if initial is None else initial
    pair.validate(mesh)
    if pin and not np.allclose(pair.alpha, pair.alpha[0]):
        raise OptimizerError("alpha is pinned but the initial alpha is not constant")
    if np.any(pair.alpha < 0) or (not pin and pair.alpha.min() <= 0):
        raise OptimizerError("initial alpha must be positive")
    start = project_to_box(mesh, pair, cfg.p, eps, pin_alpha=pin)
    if not pin and np.any(pair.alpha / lp_norm(mesh, pair.alpha, exponent_q(cfg.p)) < eps * (1 - 1e-9)):
        raise OptimizerError("initial pair lies outside X_eps")
    pair = start
    value, data = _value(mesh, pair, cfg)
    state = AscentState(pair=pair, epsilon=eps, value=value, step=cfg.step0, history=[value])
    trajectory = []
    converged = False
    stalls = 0
    dnorm = np.inf
    for it in range(cfg.max_iters + 1):
        direction = min_norm_direction(mesh, pair, cfg.k, cfg.p, data=data)
        dnorm = direction.norm(mesh)
        trajectory.append({"iter": it, "value": state.value, "direction_norm": dnorm,
                           "epsilon": state.epsilon})
        if dnorm < cfg.tol:
            converged = True
            break
        if it == cfg.max_iters:
            break
        size = np.sqrt(np.sum(mesh.volumes * (pair.alpha ** 2 * (not pin) + pair.mu ** 2)))
        unit = size / dnorm
        t = state.step
        accepted = None
        best = None
        for _ in range(cfg.max_backtracks):
            cand = DensityPair(pair.alpha + t * unit * direction.d_alpha,
                               np.maximum(pair.mu + t * unit * direction.d_mu, 0.0)) \
                if np.all(pair.alpha + t * unit * direction.d_alpha > 0) else None
            if cand is not None and np.any(cand.mu > 0):
                cand = project_to_box(mesh, cand, cfg.p, state.epsilon, pin_alpha=pin)
                try:
                    val, cdata = _value(mesh, cand, cfg)
                except (SolverError, OptimizerError):
                    val = -np.inf
                if val >= state.value + cfg.armijo * t * unit * dnorm ** 2:
                    accepted = (cand, val, cdata, t)
                    break
                if val > state.value and (best is None or val > best[1]):
                    best = (cand, val, cdata, t)
            t *= 0.5
        if accepted is None and best is not None:
            accepted = best
        if accepted is None:
            stalls += 1
            if state.epsilon <= cfg.epsilon_floor:
                break
            state.epsilon = max(state.epsilon / 2.0, cfg.epsilon_floor)
            state.step = cfg.step0
            continue
        pair, value, data, t = accepted
        state.pair, state.value = pair, value
        state.step = min(2.0 * t, 1.0)
        state.history.append(value)
    diagnostics = residual_diagnostics(mesh, state.pair, cfg, data,
                                       min_norm_direction(mesh, state.pair, cfg.k, cfg.p, data=data))
    return AscentResult(state=state, trajectory=trajectory, converged=converged,
                        final_direction_norm=dnorm, diagnostics=diagnostics)


def eigenmap(mesh: Mesh, data: ClusterData, weights: np.ndarray) -> np.ndarray:
    """Cluster eigenmap Phi = sqrt(mu(M)) * Phi_basis U sqrt(diag(s)), (nv, r)."""
    w, U = np.linalg.eigh((weights + weights.T) / 2)
    keep = w > 1e-14
    return np.sqrt(data.mass) * data.vectors @ (U[:, keep] * np.sqrt(w[keep]))


def residual_diagnostics(mesh: Mesh, pair: DensityPair, cfg: AscentConfig,
                         data: ClusterData, direction: GradientPair) -> dict:
    """Critical-structure residuals after rescaling so that lambda_k = 1."""
    p = cfg.p
    q = exponent_q(p)
    lam = data.lam
    Phi = eigenmap(mesh, data, direction.weights)
    alpha_r = lam ** ((p - 2) / 2) * pair.alpha
    mu_r = lam ** (p / 2) * pair.mu
    dPhi = mesh.differential(Phi)
    grad_sq = np.einsum("tcd,tcd->t", dPhi, dPhi)
    if p == 2:
        alpha_res = float(np.max(np.abs(alpha_r - 1.0)))
    else:
        alpha_res = lp_norm(mesh, np.abs(alpha_r - grad_sq ** ((p - 2) / 2)), q)
    phi_sq = mesh.cell_mean_square(Phi, lumped=cfg.lumped)
    sphere_res = float(np.sum(np.abs(1 - phi_sq) * mesh.volumes))
    K, M = pencil(mesh, DensityPair(alpha_r, mu_r), lumped=cfg.lumped)
    MPhi = M @ Phi
    weak = float(np.linalg.norm(K @ Phi - MPhi) / max(np.linalg.norm(MPhi), 1e-300))
    cell_mass = pair.mu * mesh.volumes
    return {
        "lambda_k": lam,
        "value": data.value,
        "cluster_size": data.dim,
        "alpha_residual": alpha_res,
        "sphere_residual": sphere_res,
        "weak_equation_residual": weak,
        "mass_concentration": float(cell_mass.max() / cell_mass.sum()),
        "direction_norm": direction.norm(mesh),
    }
