"""Lowest eigenpairs of the weighted pencil K(alpha) x = lambda M(mu) x."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import DensityPair, Mesh, assemble_mass, assemble_stiffness, lp_norm

log = logging.getLogger(__name__)

__all__ = [
    "SpectralResult",
    "SolverError",
    "solve_lowest",
    "pencil",
    "spectrum",
    "lambda_k",
    "normalized_eigenvalue",
    "exponent_q",
    "cluster_multiplicity",
    "cluster_of",
    "DEFAULT_CLUSTER_TOL",
]

DEFAULT_CLUSTER_TOL = 1e-6
# dense generalized solver below this many unknowns
DENSE_LIMIT = 1500


class SolverError(RuntimeError):
    """Eigensolver failure: non-convergence or a singular pencil."""


@dataclass
class SpectralResult:
    """Ordered eigenvalues with M-orthonormal eigenvectors.

    Infinite eigenvalues (directions carrying no mu-mass) are reported as
    ``np.inf`` with zero eigenvectors; ``rank_deficient`` is set when any
    occur.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    rank_deficient: bool = False
    clusters: list = field(default_factory=list)

    def __post_init__(self):
        if not self.clusters:
            self.clusters = _partition(self.eigenvalues, self.cluster_tol)

    def __len__(self):
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        ev = [float(x) if np.isfinite(x) else "inf" for x in self.eigenvalues]
        return {
            "eigenvalues": ev,
            "residuals": [float(r) for r in self.residuals],
            "clusters": [list(map(int, c)) for c in self.clusters],
            "rank_deficient": bool(self.rank_deficient),
        }


def _partition(values, rel_tol):
    clusters, current = [], [0] if len(values) else []
    for i in range(1, len(values)):
        a, b = values[i - 1], values[i]
        if np.isinf(a) and np.isinf(b):
            current.append(i)
        elif np.isfinite(b) and abs(b - a) <= rel_tol * (1.0 + abs(a)):
            current.append(i)
        else:
            clusters.append(current)
            current = [i]
    if current:
        clusters.append(current)
    return clusters


def _shift(K, M) -> float:
    # tr(K)/tr(M) tracks the top of the spectrum; dividing by n lands the
    # shift near the low end, which is what the inverse iterations need
    dk = K.diagonal().sum()
    dm = M.diagonal().sum()
    return 1.0 if dk <= 0 else float(dk / dm) / K.shape[0]


def solve_lowest(K, M, count: int, tol: float = 1e-9, seed: int = 0,
                 method: str = "auto", cluster_tol: float = DEFAULT_CLUSTER_TOL,
                 maxiter: int = 200) -> SpectralResult:
    """The ``count`` smallest eigenpairs of K x = lambda M x.

    Parameters
    ----------
    K, M : sparse or dense symmetric PSD matrices
    count : int
        Number of eigenpairs.
    tol : float
        Convergence tolerance for iterative methods; also the residual
        threshold below which pairs are accepted.
    seed : int
        Seed for the starting vector/block of the iterative solvers.
    method : {"auto", "dense", "shift-invert", "lobpcg"}
        ``auto`` uses the dense solver for small problems and the seeded block
        shift-invert subspace iteration otherwise.  Single-vector Lanczos
        (``shift-invert``) can drop members of degenerate clusters and is kept
        only as an option.
    """
    n = K.shape[0]
    if count < 1 or count > n:
        raise ValueError(f"count must be in [1, {n}]")
    K = sparse.csr_matrix(K)
    M = sparse.csr_matrix(M)
    if K.nnz == 0 or not np.any(K.data):
        return _zero_stiffness(M, count, cluster_tol)
    sigma = _shift(K, M)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "subspace"
    if method == "dense":
        lam, vec = _dense(K, M, count, sigma)
    elif method == "shift-invert":
        lam, vec = _shift_invert(K, M, count, sigma, tol, seed)
    elif method == "subspace":
        lam, vec = _subspace(K, M, count, sigma, tol, seed, maxiter)
    elif method == "lobpcg":
        lam, vec = _lobpcg(K, M, count, sigma, tol, seed, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")

    finite = np.isfinite(lam)
    vec[:, ~finite] = 0.0
    vec = _normalize(vec, M, finite)
    res = np.zeros(count)
    if np.any(finite):
        Kx = K @ vec[:, finite]
        Mx = M @ vec[:, finite]
        num = np.linalg.norm(Kx - Mx * lam[finite], axis=0)
        den = np.maximum(np.linalg.norm(Mx, axis=0), np.finfo(float).tiny)
        res[finite] = num / den
    if method != "dense":
        bad = res[finite] > max(tol, 1e-8) * 1e3 * (1 + lam[finite])
        if np.any(bad):
            raise SolverError(f"eigenpairs did not converge (max residual {res.max():.2e})")
    return SpectralResult(lam, vec, res, cluster_tol=cluster_tol,
                          rank_deficient=bool(np.any(~finite)))


def _zero_stiffness(M, count, cluster_tol):
    n = M.shape[0]
    vec = np.zeros((n, count))
    Md = M.toarray()
    w, V = sla.eigh(Md)
    order = np.argsort(-w)[:count]
    for j, i in enumerate(order):
        if w[i] > 0:
            vec[:, j] = V[:, i] / np.sqrt(w[i])
    lam = np.where(w[order] > 0, 0.0, np.inf)
    return SpectralResult(lam, vec, np.zeros(count), cluster_tol=cluster_tol,
                          rank_deficient=bool(np.any(np.isinf(lam))))


def _dense(K, M, count, sigma):
    # M x = theta (K + sigma M) x with K + sigma M positive definite; theta = 0
    # corresponds to an infinite eigenvalue of the original pencil.
    Kd, Md = K.toarray(), M.toarray()
    B = Kd + sigma * Md
    n = len(B)
    try:
        theta, vec = sla.eigh(Md, B, subset_by_index=[n - count, n - 1])
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular pencil: K and M share a kernel") from exc
    theta, vec = theta[::-1], vec[:, ::-1]
    cutoff = 1e-13 * theta.max() if theta.max() > 0 else 0.0
    with np.errstate(divide="ignore"):
        lam = np.where(theta > cutoff, 1.0 / theta - sigma, np.inf)
    lam = np.where(np.isfinite(lam), np.maximum(lam, 0.0), lam)
    # one Rayleigh refinement of the eigenvalue itself
    fin = np.isfinite(lam)
    if np.any(fin):
        X = vec[:, fin]
        num = np.einsum("ij,ij->j", X, Kd @ X)
        den = np.einsum("ij,ij->j", X, Md @ X)
        lam[fin] = np.maximum(num / den, 0.0)
    order = np.argsort(lam, kind="stable")
    return lam[order], vec[:, order]


def _factor(K, M, sigma):
    try:
        lu = spla.splu(sparse.csc_matrix(K + sigma * M))
    except RuntimeError as exc:
        raise SolverError("singular pencil: K and M share a kernel") from exc
    return lu


def _shift_invert(K, M, count, sigma, tol, seed):
    n = K.shape[0]
    lu = _factor(K, M, sigma)
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        lam, vec = spla.eigsh(K, k=count, M=M, sigma=-sigma, which="LM", OPinv=op,
                              v0=v0, tol=tol * 1e-3)
    except spla.ArpackNoConvergence as exc:
        raise SolverError("shift-invert iteration did not converge") from exc
    order = np.argsort(lam, kind="stable")
    lam = np.maximum(lam[order], 0.0)
    return lam, vec[:, order]


def _block_size(count, n):
    return min(n, 2 * count + 8)


def _relative_residuals(K, M, lam, V):
    MV = M @ V
    R = K @ V - MV * lam
    return np.linalg.norm(R, axis=0) / np.maximum(np.linalg.norm(MV, axis=0), 1e-300)


def _lobpcg(K, M, count, sigma, tol, seed, maxiter, polish=3):
    # padded block: members of a degenerate cluster straddling `count` must
    # all fit in the block or convergence of the last ones stalls
    n = K.shape[0]
    block = _block_size(count, n)
    if 5 * block > n:
        return _dense(K, M, count, sigma)
    lu = _factor(K, M, sigma)
    prec = spla.LinearOperator((n, n), matvec=lu.solve, matmat=lu.solve, dtype=float)
    X = np.random.default_rng(seed).standard_normal((n, block))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        lam, vec = spla.lobpcg(K, X, B=M, M=prec, largest=False, tol=max(tol, 1e-6),
                               maxiter=maxiter)
    # LOBPCG stalls near 1e-9; shift-invert Rayleigh-Ritz sweeps on the
    # converged block finish the job
    for _ in range(polish):
        vec = lu.solve(np.asarray(M @ vec))
        lam, vec = _rayleigh_ritz(K, M, vec)
    order = np.argsort(lam, kind="stable")[:count]
    lam = np.maximum(lam[order], 0.0)
    return lam, vec[:, order]


def _subspace(K, M, count, sigma, tol, seed, maxiter):
    n = K.shape[0]
    block = _block_size(count, n)
    if 2 * block > n:
        return _dense(K, M, count, sigma)
    lu = _factor(K, M, sigma)
    V = np.random.default_rng(seed).standard_normal((n, block))
    for _ in range(maxiter):
        V = lu.solve(np.asarray(M @ V))
        lam, V = _rayleigh_ritz(K, M, V)
        res = _relative_residuals(K, M, lam[:count], V[:, :count])
        if np.all(res <= tol * (1 + lam[:count])):
            break
    else:
        raise SolverError("block iteration did not converge")
    lam = np.maximum(lam[:count], 0.0)
    return lam, V[:, :count]


def _rayleigh_ritz(K, M, V):
    Q, _ = np.linalg.qr(V)
    Kr = Q.T @ (K @ Q)
    Mr = Q.T @ (M @ Q)
    w, C = sla.eigh((Kr + Kr.T) / 2, (Mr + Mr.T) / 2)
    return w, Q @ C


def _normalize(vec, M, finite):
    vec = np.array(vec, dtype=float)
    for j in np.flatnonzero(finite):
        x = vec[:, j]
        nrm = np.sqrt(x @ (M @ x))
        if nrm > 0:
            x = x / nrm
        # deterministic sign: largest-magnitude entry positive
        i = int(np.argmax(np.abs(x)))
        if x[i] < 0:
            x = -x
        vec[:, j] = x
    return vec


# ---------------------------------------------------------------------------
# mesh-level functionals

def exponent_q(p: float) -> float:
    """Conjugate exponent p/(p-2) for the alpha normalization (inf at p = 2)."""
    if p < 2:
        raise ValueError("p must be at least 2")
    return np.inf if p == 2 else p / (p - 2.0)


def pencil(mesh: Mesh, pair: DensityPair, lumped: bool = False):
    pair.validate(mesh)
    return assemble_stiffness(mesh, pair.alpha), assemble_mass(mesh, pair.mu, lumped=lumped)


def spectrum(mesh: Mesh, pair: DensityPair, count: int, tol: float = 1e-9,
             lumped: bool = False, **kwargs) -> SpectralResult:
    K, M = pencil(mesh, pair, lumped=lumped)
    return solve_lowest(K, M, count, tol=tol, **kwargs)


def lambda_k(mesh: Mesh, pair: DensityPair, k: int, tol: float = 1e-9, **kwargs) -> float:
    """k-th eigenvalue of the weighted pencil (index 0 is the constant mode)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    res = spectrum(mesh, pair, k + 1, tol=tol, **kwargs)
    return float(res.eigenvalues[k])


def normalized_eigenvalue(mesh: Mesh, pair: DensityPair, k: int, p: float,
                          tol: float = 1e-9, value: float | None = None, **kwargs) -> float:
    """lambda_k(alpha, mu) * mu(M) / ||alpha||_{p/(p-2)}.

    ``value`` may carry a precomputed lambda_k to skip the eigensolve.
    """
    q = exponent_q(p)
    norm = lp_norm(mesh, pair.alpha, q)
    if norm == 0:
        raise ValueError("alpha has zero norm")
    lam = lambda_k(mesh, pair, k, tol=tol, **kwargs) if value is None else value
    mass = float(np.sum(pair.mu * mesh.volumes))
    return lam * mass / norm


def cluster_of(result: SpectralResult, k: int, rel_tol: float | None = None) -> list:
    """Indices of the cluster containing eigenvalue k."""
    if not 0 <= k < len(result):
        raise IndexError("k out of range")
    clusters = result.clusters if rel_tol is None else _partition(result.eigenvalues, rel_tol)
    for c in clusters:
        if k in c:
            return list(c)
    raise AssertionError("unreachable")


def cluster_multiplicity(result: SpectralResult, k: int, rel_tol: float | None = None) -> int:
    return len(cluster_of(result, k, rel_tol))
