"""Finite-dimensional trace-norm utilities and property checks.

Positive tensors on a Hilbert space are represented by PSD matrices; their
projective norm is the trace norm (sum of singular values).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TensorError",
    "trace_norm",
    "hs_norm",
    "psd_sqrt",
    "dual_trace_norm",
    "powers_stormer_check",
    "block_norm_check",
    "align_isometry",
    "random_orthogonal",
    "random_projector",
    "GramRow",
    "GramExperiment",
    "gram_convergence_experiment",
]

PSD_CLAMP = 1e-12
HOLD_TOL = 1e-10


class TensorError(ValueError):
    pass


def _as_matrix(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2:
        raise TensorError("expected a matrix")
    if not np.all(np.isfinite(A)):
        raise TensorError("matrix entries must be finite")
    return A


def trace_norm(A) -> float:
    return float(np.sum(np.linalg.svd(_as_matrix(A), compute_uv=False)))


def hs_norm(A) -> float:
    return float(np.linalg.norm(_as_matrix(A), "fro"))


def psd_sqrt(S) -> np.ndarray:
    """Symmetric square root with eigenvalues clamped at zero."""
    S = _as_matrix(S)
    if S.shape[0] != S.shape[1]:
        raise TensorError("square matrix required")
    scale = max(float(np.max(np.abs(S))), 1.0)
    if np.max(np.abs(S - S.T)) > 1e-12 * scale:
        raise TensorError("matrix is not symmetric")
    w, V = np.linalg.eigh((S + S.T) / 2)
    if w.min() < -1e-10 * scale:
        raise TensorError("matrix is not positive semidefinite")
    w = np.where(w < PSD_CLAMP * scale, np.maximum(w, 0.0), w)
    return (V * np.sqrt(w)) @ V.T


def dual_trace_norm(t) -> tuple[float, np.ndarray]:
    """max over orthogonal U of Tr(U^T t), attained at the polar factor of t."""
    t = _as_matrix(t)
    if t.shape[0] != t.shape[1]:
        raise TensorError("square matrix required")
    U, _, Vt = np.linalg.svd(t)
    Q = U @ Vt
    return float(np.trace(Q.T @ t)), Q


def powers_stormer_check(A, B) -> dict:
    """|sqrt(A^T A) - sqrt(B^T B)|_HS <= |A^T A - B^T B|_tr^(1/2)."""
    A, B = _as_matrix(A), _as_matrix(B)
    if A.shape != B.shape:
        raise TensorError("A and B must have equal shapes")
    GA, GB = A.T @ A, B.T @ B
    lhs = hs_norm(psd_sqrt(GA) - psd_sqrt(GB))
    rhs = float(np.sqrt(trace_norm(GA - GB)))
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + HOLD_TOL)}


def _check_projector(P, n):
    P = _as_matrix(P)
    if P.shape != (n, n):
        raise TensorError("projector shape does not match")
    if np.max(np.abs(P - P.T)) > 1e-10 or np.max(np.abs(P @ P - P)) > 1e-10:
        raise TensorError("p must be an orthogonal projector")
    return P


def block_norm_check(t, P) -> dict:
    """|ptp|^2 + |ptq|^2 + |qtp|^2 + |qtq|^2 <= |t|^2 in the trace norm, q = I - p."""
    t = _as_matrix(t)
    if t.shape[0] != t.shape[1]:
        raise TensorError("square matrix required")
    P = _check_projector(P, t.shape[0])
    Q = np.eye(t.shape[0]) - P
    sum_sq = sum(trace_norm(X @ t @ Y) ** 2 for X in (P, Q) for Y in (P, Q))
    total_sq = trace_norm(t) ** 2
    return {"sum_sq": sum_sq, "total_sq": total_sq, "holds": bool(sum_sq <= total_sq + HOLD_TOL)}


def align_isometry(F1, F2, tol: float = 1e-8) -> np.ndarray:
    """Partial isometry I with I F1 = F2, given F1^T F1 = F2^T F2.

    I maps the range of F1 onto the range of F2 and vanishes on its
    orthogonal complement.  Raises TensorError on a Gram mismatch.
    """
    F1, F2 = _as_matrix(F1), _as_matrix(F2)
    if F1.shape[1] != F2.shape[1]:
        raise TensorError("F1 and F2 need the same number of columns")
    scale = max(hs_norm(F1) ** 2, hs_norm(F2) ** 2, 1e-300)
    if hs_norm(F1.T @ F1 - F2.T @ F2) > tol * scale:
        raise TensorError("Gram matrices differ beyond tolerance")
    U, s, Vt = np.linalg.svd(F2 @ F1.T, full_matrices=False)
    r = int(np.sum(s > 1e-12 * max(s.max(initial=0.0), 1e-300)))
    return U[:, :r] @ Vt[:r]


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def random_projector(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = int(rng.integers(0, n + 1)) if rank is None else rank
    V = random_orthogonal(n, rng)[:, :r]
    return V @ V.T


@dataclass(frozen=True)
class GramRow:
    scale: float
    gram_gap: float
    aligned_distance: float


@dataclass
class GramExperiment:
    rows: list
    c_upper: float       # fitted C in d <= C g^(1/2)
    c_lower: float       # fitted C' in g <= C' d (|F_n|_HS + |F|_HS)
    slope: float         # log-log slope of d against g

    def table(self) -> list:
        return [(r.scale, r.gram_gap, r.aligned_distance) for r in self.rows]


def gram_convergence_experiment(F, scales, seed: int = 0) -> GramExperiment:
    """Perturb F, twist by random isometries and compare Gram gaps with aligned distances.

    For each scale s, F_n = R_n (F + s E) with E a unit-HS Gaussian matrix
    and R_n a random orthogonal matrix.  The aligned distance is the
    orthogonal Procrustes optimum min_I |I F_n - F|_HS.
    """
    F = _as_matrix(F)
    rng = np.random.default_rng(seed)
    rows = []
    nF = hs_norm(F)
    for s in scales:
        E = rng.standard_normal(F.shape)
        E /= hs_norm(E)
        R = random_orthogonal(F.shape[0], rng)
        Fn = R @ (F + float(s) * E)
        g = trace_norm(Fn.T @ Fn - F.T @ F)
        U, _, Vt = np.linalg.svd(F @ Fn.T)
        d = hs_norm(U @ Vt @ Fn - F)
        rows.append(GramRow(float(s), g, d))
    pos = [r for r in rows if r.gram_gap > 0 and r.aligned_distance > 0]
    c_up = max((r.aligned_distance / np.sqrt(r.gram_gap) for r in pos), default=0.0)
    # |I F_n|_HS <= |F|_HS + d bounds the norm factor
    c_lo = max((r.gram_gap / (r.aligned_distance * (2 * nF + r.aligned_distance))
                for r in pos), default=0.0)
    if len(pos) >= 2:
        x = np.log([r.gram_gap for r in pos])
        y = np.log([r.aligned_distance for r in pos])
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = float("nan")
    return GramExperiment(rows=rows, c_upper=float(c_up), c_lower=float(c_lo), slope=slope)
