"""Simplicial meshes of model closed manifolds and P1 assembly.

Densities are piecewise constant per simplex.  Geometry is the flat metric of
the ambient space restricted to each simplex; periodic meshes carry unwrapped
per-simplex coordinates so that the flat torus metric is exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy import sparse

__all__ = [
    "Mesh",
    "DensityPair",
    "MeshError",
    "build_sphere_mesh",
    "build_flat_torus_mesh",
    "assemble_stiffness",
    "assemble_mass",
    "lp_norm",
    "conformal_pair",
    "conformal_pencil",
]

MAX_SPHERE_REFINEMENT = {2: 8, 3: 5}


class MeshError(ValueError):
    """Invalid mesh construction or density input."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """A closed simplicial m-manifold with embedded (or unwrapped) simplices.

    Parameters
    ----------
    dimension : int
        Intrinsic dimension m.
    vertices : (nv, D) array
        Vertex positions in the ambient space.
    simplices : (nt, m+1) int array
        Vertex indices of each simplex.
    coords : (nt, m+1, D) array, optional
        Per-simplex vertex coordinates used for the metric.  Defaults to
        ``vertices[simplices]``; periodic meshes pass unwrapped coordinates.
    periods : (D,) array, optional
        Lengths of the periodic box, recorded for I/O.
    """

    dimension: int
    vertices: np.ndarray
    simplices: np.ndarray
    coords: np.ndarray | None = None
    periods: np.ndarray | None = None
    volumes: np.ndarray = field(init=False, repr=False)
    gradients: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        simplices = np.ascontiguousarray(self.simplices, dtype=np.int64)
        m = int(self.dimension)
        if m < 1:
            raise MeshError("dimension must be positive")
        if simplices.ndim != 2 or simplices.shape[1] != m + 1:
            raise MeshError(f"simplices must have {m + 1} vertices each")
        if simplices.size and (simplices.min() < 0 or simplices.max() >= len(vertices)):
            raise MeshError("simplex index out of range")
        coords = vertices[simplices] if self.coords is None else np.asarray(self.coords, float)
        volumes, gradients = _simplex_geometry(coords)
        object.__setattr__(self, "dimension", m)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "simplices", simplices)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "volumes", volumes)
        object.__setattr__(self, "gradients", gradients)

    @classmethod
    def _from_geometry(cls, base: "Mesh", volumes, gradients) -> "Mesh":
        # bypasses recomputation; used for metric rescaling
        obj = object.__new__(cls)
        for name in ("dimension", "vertices", "simplices", "coords", "periods"):
            object.__setattr__(obj, name, getattr(base, name))
        object.__setattr__(obj, "volumes", volumes)
        object.__setattr__(obj, "gradients", gradients)
        return obj

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_simplices(self) -> int:
        return len(self.simplices)

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def faces(self) -> np.ndarray:
        """Sorted (m-1)-faces, one row per (simplex, opposite vertex)."""
        m = self.dimension
        rows = [np.delete(self.simplices, j, axis=1) for j in range(m + 1)]
        return np.sort(np.concatenate(rows), axis=1)

    def is_closed(self) -> bool:
        """True when every (m-1)-face is shared by exactly two simplices."""
        _, counts = np.unique(self.faces(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def edges(self) -> np.ndarray:
        m = self.dimension
        pairs = [self.simplices[:, [i, j]] for i in range(m + 1) for j in range(i + 1, m + 1)]
        return np.unique(np.sort(np.concatenate(pairs), axis=1), axis=0)

    def vertex_degrees(self) -> np.ndarray:
        e = self.edges()
        return np.bincount(e.ravel(), minlength=self.n_vertices)

    def rescaled(self, rho) -> "Mesh":
        """The same complex with the metric multiplied by ``rho**2`` per simplex.

        Volumes scale by ``rho**m``; hat-function gradients, measured in the
        new metric, scale by ``1/rho``.
        """
        rho = _check_density(self, rho, "rho")
        if np.any(rho <= 0):
            raise MeshError("conformal factor must be positive")
        volumes = self.volumes * rho ** self.dimension
        gradients = self.gradients / rho[:, None, None]
        return Mesh._from_geometry(self, volumes, gradients)

    def scaled(self, s: float) -> "Mesh":
        """Ambient homothety by a factor ``s``."""
        periods = None if self.periods is None else self.periods * s
        return Mesh(self.dimension, self.vertices * s, self.simplices,
                    coords=self.coords * s, periods=periods)

    def differential(self, values: np.ndarray) -> np.ndarray:
        """Per-simplex constant differential of a P1 field.

        ``values`` has shape (nv,) or (nv, c); the result has shape (nt, D) or
        (nt, c, D).
        """
        v = np.asarray(values, float)
        local = v[self.simplices]
        # differences against the first vertex make constants exact zeros
        local = local[:, 1:] - local[:, :1]
        g = self.gradients[:, 1:]
        if v.ndim == 1:
            return np.einsum("tj,tjd->td", local, g)
        return np.einsum("tjc,tjd->tcd", local, g)

    def cell_mean_square(self, values: np.ndarray, lumped: bool = False) -> np.ndarray:
        """Per-simplex mean of |f|^2 for a P1 field f (scalar or vector valued)."""
        v = np.asarray(values, float)
        local = v[self.simplices]
        if local.ndim == 2:
            local = local[..., None]
        m = self.dimension
        sq = np.einsum("tjc,tjc->t", local, local)
        if lumped:
            return sq / (m + 1)
        s = local.sum(axis=1)
        return (sq + np.einsum("tc,tc->t", s, s)) / ((m + 1) * (m + 2))


@dataclass
class DensityPair:
    """Per-simplex densities (alpha, mu)."""

    alpha: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.alpha.shape != self.mu.shape or self.alpha.ndim != 1:
            raise MeshError("alpha and mu must be 1-d arrays of equal length")
        if np.any(self.alpha < 0) or np.any(self.mu < 0):
            raise MeshError("densities must be nonnegative")
        if not np.any(self.mu > 0):
            raise MeshError("mu must be positive on at least one simplex")

    @classmethod
    def uniform(cls, mesh: Mesh, alpha: float = 1.0, mu: float = 1.0) -> "DensityPair":
        n = mesh.n_simplices
        return cls(np.full(n, float(alpha)), np.full(n, float(mu)))

    def validate(self, mesh: Mesh) -> "DensityPair":
        if len(self.alpha) != mesh.n_simplices:
            raise MeshError("density length does not match simplex count")
        return self

    def scaled(self, a: float, b: float) -> "DensityPair":
        return DensityPair(a * self.alpha, b * self.mu)


def _simplex_geometry(coords: np.ndarray):
    nt, mp1, _ = coords.shape
    m = mp1 - 1
    edges = coords[:, 1:, :] - coords[:, :1, :]            # (nt, m, D)
    gram = np.einsum("tid,tjd->tij", edges, edges)          # (nt, m, m)
    det = np.linalg.det(gram)
    volumes = np.sqrt(np.clip(det, 0.0, None)) / factorial(m)
    if np.any(~(volumes > 0)):
        raise MeshError("degenerate simplex (zero volume)")
    inv = np.linalg.inv(gram)
    grads_rest = np.einsum("tid,tij->tjd", edges, inv)      # gradients of phi_1..phi_m
    grad0 = -grads_rest.sum(axis=1, keepdims=True)
    gradients = np.concatenate([grad0, grads_rest], axis=1)
    return volumes, gradients


def _check_density(mesh: Mesh, f, name: str) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full(mesh.n_simplices, float(f))
    if f.shape != (mesh.n_simplices,):
        raise MeshError(f"{name} length does not match simplex count")
    if not np.all(np.isfinite(f)):
        raise MeshError(f"{name} has non-finite entries")
    return f


# ---------------------------------------------------------------------------
# mesh generators

def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _cross_polytope_boundary():
    v = np.concatenate([np.eye(4), -np.eye(4)])
    tets = []
    for signs in range(16):
        tets.append([i + 4 * ((signs >> i) & 1) for i in range(4)])
    return v, np.array(tets)


def _midpoints(vertices, simplices):
    """Append edge midpoints; return new vertices and an edge -> index lookup."""
    m = simplices.shape[1] - 1
    pairs = np.concatenate([simplices[:, [i, j]] for i in range(m + 1)
                            for j in range(i + 1, m + 1)])
    pairs = np.sort(pairs, axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    mids = 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    ids = len(vertices) + inverse.reshape(-1)
    nt = len(simplices)
    # column c of `table` holds the midpoint id for the c-th local edge
    table = ids.reshape(-1, nt).T
    return np.concatenate([vertices, mids]), table


def _subdivide_triangles(vertices, tris):
    vertices, mid = _midpoints(vertices, tris)
    a, b, c = tris.T
    ab, ac, bc = mid.T  # local edge order (0,1), (0,2), (1,2)
    new = np.concatenate([
        np.stack([a, ab, ac], 1), np.stack([ab, b, bc], 1),
        np.stack([ac, bc, c], 1), np.stack([ab, bc, ac], 1),
    ])
    return vertices, new


def _subdivide_tetrahedra(vertices, tets):
    vertices, mid = _midpoints(vertices, tets)
    v0, v1, v2, v3 = tets.T
    m01, m02, m03, m12, m13, m23 = mid.T
    corners = [
        np.stack([v0, m01, m02, m03], 1), np.stack([m01, v1, m12, m13], 1),
        np.stack([m02, m12, v2, m23], 1), np.stack([m03, m13, m23, v3], 1),
    ]
    # inner octahedron split along its shortest diagonal
    diags = [(m01, m23, (m02, m12, m13, m03)),
             (m02, m13, (m01, m12, m23, m03)),
             (m03, m12, (m01, m02, m23, m13))]
    lengths = np.stack([np.linalg.norm(vertices[a] - vertices[b], axis=1) for a, b, _ in diags], 1)
    choice = np.argmin(lengths, axis=1)
    inner = np.zeros((len(tets), 4, 4), dtype=np.int64)
    for idx, (a, b, ring) in enumerate(diags):
        sel = choice == idx
        for r in range(4):
            inner[sel, r] = np.stack([a, b, ring[r], ring[(r + 1) % 4]], 1)[sel]
    new = np.concatenate(corners + [inner[:, r] for r in range(4)])
    return vertices, new


def build_sphere_mesh(m: int, refinement: int) -> Mesh:
    """Triangulated unit sphere S^m (m = 2 or 3) by midpoint subdivision.

    m = 2 starts from the icosahedron, m = 3 from the boundary of the
    4-dimensional cross-polytope; every refinement splits edges at midpoints
    and projects the new vertices radially onto the sphere.
    """
    if m not in MAX_SPHERE_REFINEMENT:
        raise MeshError(f"unsupported sphere dimension {m}; use 2 or 3")
    refinement = int(refinement)
    if refinement < 0 or refinement > MAX_SPHERE_REFINEMENT[m]:
        raise MeshError(f"refinement must be in [0, {MAX_SPHERE_REFINEMENT[m]}] for m={m}")
    if m == 2:
        v, s = _icosahedron()
        step = _subdivide_triangles
    else:
        v, s = _cross_polytope_boundary()
        step = _subdivide_tetrahedra
    for _ in range(refinement):
        v, s = step(v, s)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(m, v, s)


def build_flat_torus_mesh(m: int = 2, divisions: int = 16) -> Mesh:
    """Flat torus R^m / (2 pi Z)^m on a regular periodic grid.

    m = 2 splits each square along the same diagonal (every vertex has
    degree 6); m = 3 uses the Kuhn subdivision of each cube into six
    tetrahedra.
    """
    n = int(divisions)
    if m not in (2, 3):
        raise MeshError("flat torus supports m = 2 or 3")
    if n < 3:
        raise MeshError("divisions must be at least 3")
    h = 2.0 * np.pi / n
    grid = np.stack(np.meshgrid(*([np.arange(n)] * m), indexing="ij"), -1).reshape(-1, m)
    vertices = grid * h
    strides = n ** np.arange(m)[::-1]

    def vid(idx):
        return (np.mod(idx, n) * strides).sum(-1)

    if m == 2:
        local = [[(0, 0), (1, 0), (1, 1)], [(0, 0), (1, 1), (0, 1)]]
    else:
        local = []
        for perm in itertools.permutations(range(3)):
            path = [np.zeros(3, int)]
            for axis in perm:
                nxt = path[-1].copy()
                nxt[axis] = 1
                path.append(nxt)
            local.append([tuple(p) for p in path])
    simplices, coords = [], []
    for shape in local:
        offs = np.array(shape)                                # (m+1, m)
        idx = grid[:, None, :] + offs[None, :, :]             # (ncell, m+1, m)
        simplices.append(vid(idx))
        coords.append(idx * h)
    return Mesh(m, vertices, np.concatenate(simplices), coords=np.concatenate(coords),
                periods=np.full(m, 2.0 * np.pi))


# ---------------------------------------------------------------------------
# assembly

def _local_pairs(mesh: Mesh):
    m = mesh.dimension
    rows = np.repeat(mesh.simplices, m + 1, axis=1)
    cols = np.tile(mesh.simplices, (1, m + 1))
    return rows.ravel(), cols.ravel()


def assemble_stiffness(mesh: Mesh, alpha) -> sparse.csr_matrix:
    """K_ij = sum_T alpha_T <grad phi_i, grad phi_j> vol(T)."""
    alpha = _check_density(mesh, alpha, "alpha")
    if np.any(alpha < 0):
        raise MeshError("alpha must be nonnegative")
    g = mesh.gradients
    local = np.einsum("tid,tjd->tij", g, g) * (alpha * mesh.volumes)[:, None, None]
    # exact zero row sums: diagonal from the off-diagonal entries
    mp1 = mesh.dimension + 1
    off = ~np.eye(mp1, dtype=bool)
    local = np.where(off, local, 0.0)
    local[:, np.arange(mp1), np.arange(mp1)] = -local.sum(axis=2)
    rows, cols = _local_pairs(mesh)
    n = mesh.n_vertices
    K = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble_mass(mesh: Mesh, mu, lumped: bool = False) -> sparse.csr_matrix:
    """Consistent (default) or lumped P1 mass matrix weighted by mu per simplex."""
    mu = _check_density(mesh, mu, "mu")
    if np.any(mu < 0):
        raise MeshError("mu must be nonnegative")
    if not np.any(mu > 0):
        raise MeshError("mu must be positive on at least one simplex")
    m = mesh.dimension
    w = mu * mesh.volumes
    n = mesh.n_vertices
    if lumped:
        vals = np.repeat(w / (m + 1), m + 1)
        idx = mesh.simplices.ravel()
        return sparse.coo_matrix((vals, (idx, idx)), shape=(n, n)).tocsr()
    ref = (np.ones((m + 1, m + 1)) + np.eye(m + 1)) / ((m + 1) * (m + 2))
    local = w[:, None, None] * ref[None]
    rows, cols = _local_pairs(mesh)
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def lp_norm(mesh: Mesh, f, q: float) -> float:
    """(sum_T f_T^q vol(T))^(1/q); the maximum entry for q = inf."""
    f = _check_density(mesh, f, "f")
    if np.any(f < 0):
        raise MeshError("lp_norm expects a nonnegative density")
    if np.isinf(q):
        return float(f.max())
    if not q > 1:
        raise MeshError("q must exceed 1")
    scale = f.max()
    if scale == 0:
        return 0.0
    return float(scale * (np.sum((f / scale) ** q * mesh.volumes)) ** (1.0 / q))


def conformal_pair(mesh: Mesh, rho) -> DensityPair:
    """Density pair (rho^(m-2), rho^m) equivalent to the metric rho^2 g."""
    rho = _check_density(mesh, rho, "rho")
    if np.any(rho <= 0):
        raise MeshError("conformal factor must be positive")
    m = mesh.dimension
    return DensityPair(rho ** (m - 2), rho ** m)


def conformal_pencil(mesh: Mesh, rho, lumped: bool = False):
    """(K, M) assembled on the metric rho^2 g with unit densities."""
    scaled = mesh.rescaled(rho)
    ones = np.ones(mesh.n_simplices)
    return assemble_stiffness(scaled, ones), assemble_mass(scaled, ones, lumped=lumped)
