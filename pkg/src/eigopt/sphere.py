"""Closed-form oracle for the sphere maps Phi_k(x, y) = x/|x| on S^m.

Here S^m sits in R^(m-k) x R^(k+1), n = m - k - 1 is the target dimension,
and the index of the second variation decomposes over spherical harmonics
on S^k into the one-dimensional forms

    q_l[psi] = int psi'^2 w_1 + L int psi^2 w_0     on (-1, 1),
    w_1 = (1+t)^((k+1)/2 + l) (1-t)^((nt+1)/2 - a),
    w_0 = (1+t)^((k-1)/2 + l) (1-t)^((nt-1)/2 - a),
    4L  = l (mt - 1 + l) - n - a (k + 1 + 2 l),

with nt = n + 2 - p, mt = nt + k + 1 and a the least root of
a^2 - (nt - 1) a + n = 0.  Since w_1 = (1 - t^2) w_0 the form
is diagonal on Jacobi polynomials, which gives a third, independent count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

__all__ = [
    "INFINITE",
    "PhiParams",
    "IndexEntry",
    "IndexReport",
    "SphereOracleError",
    "jacobi_alpha",
    "index_q_ell",
    "harmonic_multiplicity",
    "total_index",
    "form_weights",
    "jacobi_index",
    "sturm_liouville_index",
    "phi_energy_density",
    "phi_pullback_check",
    "phi_energy",
    "phi_energy_closed_form",
    "phi_energy_monte_carlo",
    "sphere_volume",
    "hersch_bound",
    "regularity_thresholds",
]


class _Infinite:
    """Marker for an infinite Jacobi root, and hence an infinite index."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    __str__ = __repr__

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()


class SphereOracleError(ValueError):
    pass


@dataclass(frozen=True)
class PhiParams:
    m: int
    k: int
    p: float

    def __post_init__(self):
        if int(self.m) != self.m or int(self.k) != self.k:
            raise SphereOracleError("m and k must be integers")
        if self.m < 2:
            raise SphereOracleError("m must be at least 2")
        if self.k < 0 or self.k > self.m - 1:
            raise SphereOracleError("k must satisfy 0 <= k <= m - 1")
        if not self.p >= 2:
            raise SphereOracleError("p must be at least 2")
        if self.n < 1:
            raise SphereOracleError("n = m - k - 1 must be at least 1")

    @property
    def n(self) -> int:
        return int(self.m - self.k - 1)

    @property
    def n_tilde(self) -> float:
        return self.n + 2.0 - self.p

    @property
    def m_tilde(self) -> float:
        return self.n_tilde + self.k + 1


def jacobi_alpha(params: PhiParams):
    """Least root of a^2 - (nt - 1) a + n = 0, or INFINITE if there is none."""
    b = params.n_tilde - 1.0
    disc = b * b - 4.0 * params.n
    if disc < 0:
        return INFINITE
    # the product form avoids cancellation in b - sqrt(disc)
    return 2.0 * params.n / (b + math.sqrt(disc))


def index_q_ell(alpha: float, ell: int) -> int:
    """#{s in {0, 1, ...} : s < (alpha - ell)/2}."""
    if alpha is INFINITE or not math.isfinite(alpha):
        raise SphereOracleError("index_q_ell needs a finite alpha")
    x = (alpha - ell) / 2.0
    if x <= 0:
        return 0
    return int(math.ceil(x))


def harmonic_multiplicity(k: int, ell: int) -> int:
    """Dimension of the degree-ell spherical harmonics on S^k (S^0 has two points)."""
    if k < 0 or ell < 0:
        raise SphereOracleError("k and ell must be nonnegative")
    if k == 0:
        return 1 if ell <= 1 else 0
    return math.comb(k + ell, ell) - (math.comb(k + ell - 2, ell - 2) if ell >= 2 else 0)


@dataclass(frozen=True)
class IndexEntry:
    ell: int
    multiplicity: int
    index: int


@dataclass
class IndexReport:
    params: PhiParams
    alpha_root: object
    entries: list = field(default_factory=list)
    total: object = 0
    sobolev_member: bool = False
    maximizer_range: bool = False
    strict_range: bool = False
    gap_region: bool = False

    def to_row(self) -> dict:
        a = self.alpha_root
        return {
            "m": self.params.m,
            "k": self.params.k,
            "p": self.params.p,
            "alpha": "INFINITE" if a is INFINITE else repr(float(a)),
            "total": "INFINITE" if self.total is INFINITE else int(self.total),
            "sobolev_member": self.sobolev_member,
            "maximizer_range": self.maximizer_range,
            "strict_range": self.strict_range,
            "gap_region": self.gap_region,
        }


def _verdicts(params: PhiParams):
    m, k, p = params.m, params.k, params.p
    sob = k < m - p
    maxr = k <= m - 3 - math.ceil(2 * p)
    strict = (m - 2 - math.ceil(2 * p)) <= k <= (m - 1 - math.floor(p))
    return sob, maxr, strict


def total_index(params: PhiParams) -> IndexReport:
    """sum_l m_l ind q_l, with the range verdicts for the pair (k, p)."""
    alpha = jacobi_alpha(params)
    sob, maxr, strict = _verdicts(params)
    rep = IndexReport(params=params, alpha_root=alpha, sobolev_member=sob,
                      maximizer_range=maxr, strict_range=strict)
    if alpha is INFINITE:
        rep.total = INFINITE
        return rep
    rep.gap_region = alpha > 2
    ell, total = 0, 0
    while True:
        ind = index_q_ell(alpha, ell)
        mult = harmonic_multiplicity(params.k, ell)
        rep.entries.append(IndexEntry(ell, mult, ind))
        total += mult * ind
        if ind == 0:
            break
        ell += 1
    rep.total = total
    if alpha <= 2:
        short = index_q_ell(alpha, 0) + (params.k + 1) * index_q_ell(alpha, 1)
        if short != total:
            raise AssertionError("index reduction failed for alpha <= 2")
    return rep


# ---------------------------------------------------------------------------
# one-dimensional forms

def form_weights(params: PhiParams, ell: int):
    """Exponents (a1, b1, a0, b0) of w_1, w_0 and the constant L of q_l."""
    alpha = jacobi_alpha(params)
    if alpha is INFINITE:
        raise SphereOracleError("q_l is undefined without a finite Jacobi root")
    k, n, nt, mt = params.k, params.n, params.n_tilde, params.m_tilde
    a1 = (k + 1) / 2 + ell
    b1 = (nt + 1) / 2 - alpha
    a0 = (k - 1) / 2 + ell
    b0 = (nt - 1) / 2 - alpha
    L = (ell * (mt - 1 + ell) - n - alpha * (k + 1 + 2 * ell)) / 4.0
    return a1, b1, a0, b0, L


def jacobi_index(params: PhiParams, ell: int) -> int:
    """Count of s >= 0 with s (s + a0 + b0 + 1) + L < 0 (Jacobi polynomial spectrum)."""
    _, _, a0, b0, L = form_weights(params, ell)
    c = a0 + b0 + 1
    count, s = 0, 0
    while s * (s + c) + L < 0:
        count += 1
        s += 1
    return count


def _graded_nodes(N: int) -> np.ndarray:
    # Chebyshev-type grading: element sizes shrink like 1/N^2 at both ends
    return -np.cos(np.pi * np.arange(N + 1) / N)


def _element_integrals(t: np.ndarray, x: float, y: float, degree: int = 12):
    """Per-element moments int phi_i phi_j (1+t)^x (1-t)^y and int (1+t)^x (1-t)^y."""
    gl_z, gl_w = special.roots_legendre(degree)
    a, b = t[:-1], t[1:]
    h = b - a
    ne = len(h)
    mass = np.zeros((ne, 2, 2))
    total = np.zeros(ne)

    def accumulate(sel, nodes, weights):
        # nodes (ns, q) physical, weights (ns, q) including the weight function
        s = (nodes - a[sel, None]) / h[sel, None]
        n0, n1 = 1 - s, s
        mass[sel, 0, 0] = np.sum(weights * n0 * n0, axis=1)
        mass[sel, 0, 1] = mass[sel, 1, 0] = np.sum(weights * n0 * n1, axis=1)
        mass[sel, 1, 1] = np.sum(weights * n1 * n1, axis=1)
        total[sel] = np.sum(weights, axis=1)

    inner = np.arange(1, ne - 1)
    nodes = a[inner, None] + (gl_z[None, :] + 1) * h[inner, None] / 2
    w = gl_w[None, :] * h[inner, None] / 2 * (1 + nodes) ** x * (1 - nodes) ** y
    accumulate(inner, nodes, w)
    # left end: Gauss-Jacobi for (1+t)^x, the smooth factor (1-t)^y is sampled
    z, wz = special.roots_jacobi(degree, 0.0, x)           # weight (1+z)^x on [-1, 1]
    hl = h[0]
    nodes = -1 + (z + 1) * hl / 2
    w = wz * (hl / 2) ** (x + 1) * (1 - nodes) ** y
    accumulate(np.array([0]), nodes[None, :], w[None, :])
    # right end: Gauss-Jacobi for (1-t)^y
    z, wz = special.roots_jacobi(degree, y, 0.0)           # weight (1-z)^y on [-1, 1]
    hr = h[-1]
    nodes = 1 - (1 - z) * hr / 2
    w = wz * (hr / 2) ** (y + 1) * (1 + nodes) ** x
    accumulate(np.array([ne - 1]), nodes[None, :], w[None, :])
    return mass, total


def _assemble_1d(local):
    """Diagonal and off-diagonal bands of the assembled tridiagonal matrix."""
    n = len(local) + 1
    d = np.zeros(n)
    d[:-1] += local[:, 0, 0]
    d[1:] += local[:, 1, 1]
    return d, local[:, 0, 1].copy()


def sturm_liouville_index(params: PhiParams, ell: int, N: int = 2000) -> int:
    """Negative eigenvalue count of the P1 discretization of q_l on a graded mesh.

    No boundary conditions are imposed; the form is assembled against the
    weight of its second term and counted by Sylvester's law of inertia.
    """
    if N < 200:
        raise SphereOracleError("N must be at least 200")
    a1, b1, a0, b0, L = form_weights(params, ell)
    for e in (a1, b1, a0, b0):
        if e <= -1:
            raise SphereOracleError("non-integrable weight exponent %.6g" % e)
    t = _graded_nodes(N)
    h = np.diff(t)
    _, w1 = _element_integrals(t, a1, b1)
    stiff = np.empty((N, 2, 2))
    stiff[:, 0, 0] = stiff[:, 1, 1] = w1 / h ** 2
    stiff[:, 0, 1] = stiff[:, 1, 0] = -w1 / h ** 2
    mass, _ = _element_integrals(t, a0, b0)
    ds, es = _assemble_1d(stiff)
    dm, em = _assemble_1d(mass)
    d, e = ds + L * dm, es + L * em
    # bisection restricted to the negative range; the Gershgorin bound sets the cutoff
    scale = float(np.max(np.abs(d) + np.r_[np.abs(e), 0] + np.r_[0, np.abs(e)]))
    ev = linalg.eigvalsh_tridiagonal(d, e, select="v", select_range=(-2 * scale, -1e-13 * scale))
    return int(len(ev))


# ---------------------------------------------------------------------------
# the maps Phi_k

def sphere_volume(n: int) -> float:
    """Volume of the unit sphere S^n (S^0 counts two points)."""
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def _split(params: PhiParams, point):
    z = np.asarray(point, dtype=float)
    if z.shape != (params.m + 1,):
        raise SphereOracleError("sample point must lie in R^(m+1)")
    return z[: params.n + 1], z[params.n + 1:]


def phi_energy_density(params: PhiParams, point) -> float:
    """|d Phi_k|^2 on S^m at (x, y): equals n / |x|^2."""
    x, _ = _split(params, point)
    r2 = float(x @ x)
    if r2 <= 0:
        raise SphereOracleError("Phi_k is singular where x = 0")
    return params.n / r2


def _phi(params, z):
    x = z[: params.n + 1]
    return x / np.linalg.norm(x)


def phi_pullback_check(params: PhiParams, point, h: float = 1e-4) -> dict:
    """Closed form |d Phi_k|^2 against Richardson-extrapolated central differences."""
    z = np.asarray(point, dtype=float)
    nz = np.linalg.norm(z)
    if abs(nz - 1) > 1e-10:
        raise SphereOracleError("sample point must lie on the unit sphere")
    analytic = phi_energy_density(params, z)
    # orthonormal basis of the tangent space at z
    q, _ = np.linalg.qr(np.column_stack([z, np.eye(len(z))]))
    basis = q[:, 1:len(z)]

    def fd(step):
        total = 0.0
        for e in basis.T:
            d = (_phi(params, z + step * e) - _phi(params, z - step * e)) / (2 * step)
            total += float(d @ d)
        return total

    numeric = (4 * fd(h / 2) - fd(h)) / 3
    return {"analytic": analytic, "numeric": numeric}


def _check_sobolev(params):
    if not params.k < params.m - params.p:
        raise SphereOracleError("|d Phi_k|^p is not integrable unless k < m - p")


def phi_energy_closed_form(params: PhiParams) -> float:
    """|S^n| |S^k| n^(p/2) B((n + 1 - p)/2, (k + 1)/2) / 2."""
    _check_sobolev(params)
    n, k, p = params.n, params.k, params.p
    return (sphere_volume(n) * sphere_volume(k) * n ** (p / 2)
            * 0.5 * special.beta((n + 1 - p) / 2, (k + 1) / 2))


def phi_energy(params: PhiParams, quadrature_size: int = 16) -> float:
    """int_{S^m} |d Phi_k|^p via Gauss-Jacobi quadrature in t = |y|^2 - |x|^2.

    With |x|^2 = (1 - t)/2 the volume element of S^m becomes
    |S^n| |S^k| 2^(-(n+k+2)/2) (1-t)^((n-1)/2) (1+t)^((k-1)/2) dt.
    """
    _check_sobolev(params)
    n, k, p = params.n, params.k, params.p
    b = (n - 1) / 2 - p / 2                                  # (1-t) exponent after |x|^-p
    a = (k - 1) / 2
    z, w = special.roots_jacobi(quadrature_size, b, a)
    # remaining integrand is the constant n^(p/2) 2^(p/2)
    integral = np.sum(w) * n ** (p / 2) * 2 ** (p / 2)
    return float(sphere_volume(n) * sphere_volume(k) * 2 ** (-(n + k + 2) / 2) * integral)


def phi_energy_monte_carlo(params: PhiParams, samples: int = 2_000_000, seed: int = 0,
                           chunk: int = 500_000) -> float:
    """Uniform sampling of |d Phi_k|^p over S^m times Vol(S^m)."""
    _check_sobolev(params)
    rng = np.random.default_rng(seed)
    acc, done = 0.0, 0
    while done < samples:
        s = min(chunk, samples - done)
        g = rng.standard_normal((s, params.m + 1))
        r2 = np.sum(g[:, : params.n + 1] ** 2, axis=1) / np.sum(g ** 2, axis=1)
        acc += float(np.sum((params.n / r2) ** (params.p / 2)))
        done += s
    return acc / samples * sphere_volume(params.m)


def hersch_bound(m: int, p: float, volume: float) -> float:
    """m Vol^(2/p), the upper bound for lambda_bar_{1,p} on a minimal sphere of dimension m."""
    if not p >= 2 or not volume > 0:
        raise ValueError("need p >= 2 and a positive volume")
    return m * volume ** (2.0 / p)


def regularity_thresholds(m: int, p: float) -> dict:
    """d = 3 + floor(p + 2 sqrt(p - 1)), the singular-set bound m - d and the smooth verdict."""
    if not p >= 2 or m < 2:
        raise ValueError("need p >= 2 and m >= 2")
    f = math.floor(p + 2 * math.sqrt(p - 1) + 1e-12)
    d = 3 + f
    smooth = m <= 2 + f
    alt = p >= m - 2 * math.sqrt(m - 2) - 1e-12
    if smooth != alt:
        raise AssertionError("smoothness criteria disagree for m=%s, p=%s" % (m, p))
    bound = m - d
    return {"d": d, "singular_dim_bound": bound if bound >= 0 else -math.inf, "smooth": smooth}
