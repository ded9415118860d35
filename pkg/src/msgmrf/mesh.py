"""Meshes, tent bases, finite-element operators and GMRF precisions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (DegenerateSimplex, InvalidExtent, InvalidPhi, NonPositiveParameter,
                     PointOutsideMesh)
from .sparse import SparseSymmetric

_BARY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """A 1D chain or a 2D planar triangulation.

    ``vertices`` has shape ``(n, dimension)`` and ``simplices`` shape
    ``(s, dimension + 1)``. ``grid`` optionally records the structured layout
    ``(origin, spacing, shape)`` used for fast point location.
    """

    dimension: int
    vertices: np.ndarray
    simplices: np.ndarray
    grid: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        s = np.asarray(self.simplices, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "simplices", s)
        if self.dimension not in (1, 2) or v.shape[1] != self.dimension:
            raise ValueError("mesh dimension must be 1 or 2 and match vertex coordinates")
        if s.ndim != 2 or s.shape[1] != self.dimension + 1:
            raise ValueError("simplices must have dimension + 1 vertices each")
        if s.size and (s.min() < 0 or s.max() >= len(v)):
            raise ValueError("simplex references an invalid vertex")
        measure = simplex_measures(self)
        if np.any(measure <= 0):
            raise DegenerateSimplex(
                f"{int(np.sum(measure <= 0))} degenerate or negatively oriented simplices")
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        if ncomp != 1:
            raise ValueError(f"mesh is not connected ({ncomp} components)")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an ``(e, 2)`` array with ``i < j``."""
        s = self.simplices
        if self.dimension == 1:
            pairs = s
        else:
            pairs = np.vstack([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def adjacency(self) -> sp.csr_matrix:
        e = self.edges()
        n = len(self.vertices)
        a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        a = (a + a.T).tocsr()
        a.data[:] = 1.0
        return a


def simplex_measures(mesh: Mesh) -> np.ndarray:
    """Segment lengths (1D) or signed triangle areas (2D)."""
    v, s = mesh.vertices, mesh.simplices
    if mesh.dimension == 1:
        return v[s[:, 1], 0] - v[s[:, 0], 0]
    p0, p1, p2 = v[s[:, 0]], v[s[:, 1]], v[s[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _parse_extent(dimension, extent):
    ext = np.asarray(extent, dtype=float).reshape(-1)
    if ext.size != 2 * dimension:
        raise InvalidExtent(f"extent for a {dimension}D mesh needs {2 * dimension} numbers")
    lo, hi = ext[0::2], ext[1::2]
    if np.any(hi <= lo):
        raise InvalidExtent("extent upper bounds must exceed lower bounds")
    return lo, hi


def build_grid_mesh(dimension: int, extent, spacing: float) -> Mesh:
    """Uniform chain (1D) or structured triangulation of a rectangle (2D).

    ``extent`` is ``(xmin, xmax)`` in 1D and ``((xmin, xmax), (ymin, ymax))``
    in 2D. The number of vertices per axis is ``round(length / spacing) + 1``.
    """
    lo, hi = _parse_extent(dimension, extent)
    if not spacing > 0 or np.any(spacing >= hi - lo):
        raise InvalidExtent("spacing must be positive and smaller than the extent")
    counts = np.rint((hi - lo) / spacing).astype(int) + 1
    axes = [np.linspace(lo[d], hi[d], counts[d]) for d in range(dimension)]
    steps = (hi - lo) / (counts - 1)
    if dimension == 1:
        n = counts[0]
        simplices = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        return Mesh(1, axes[0][:, None], simplices, grid=(lo, steps, tuple(counts)))
    nx, ny = counts
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
    verts = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    v00 = (j * nx + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + nx, v00 + nx + 1
    tris = np.empty((2 * v00.size, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    return Mesh(2, verts, tris, grid=(lo, steps, (nx, ny)))


def _barycentric(mesh, tri_idx, pts):
    v = mesh.vertices
    s = mesh.simplices[tri_idx]
    p0, p1, p2 = v[s[:, 0]], v[s[:, 1]], v[s[:, 2]]
    d = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    l1 = ((pts[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (pts[:, 1] - p0[:, 1])) / d
    l2 = ((p1[:, 0] - p0[:, 0]) * (pts[:, 1] - p0[:, 1]) - (pts[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])) / d
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def locate_points(mesh: Mesh, points):
    """Containing simplex and barycentric weights for each point.

    Returns ``(simplex_index, weights)``; ``simplex_index`` is -1 for points
    outside the mesh.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if mesh.dimension == 1 else pts[None, :]
    m = len(pts)
    k = mesh.dimension + 1
    found = np.full(m, -1, dtype=np.int64)
    weights = np.zeros((m, k))
    if m == 0:
        return found, weights
    if mesh.dimension == 1:
        x = mesh.vertices[:, 0]
        seg_lo = x[mesh.simplices[:, 0]]
        order = np.argsort(seg_lo)
        pos = np.searchsorted(seg_lo[order], pts[:, 0], side="right") - 1
        pos = np.clip(pos, 0, len(order) - 1)
        cand = order[pos]
        a = x[mesh.simplices[cand, 0]]
        b = x[mesh.simplices[cand, 1]]
        t = (pts[:, 0] - a) / (b - a)
        ok = (t >= -_BARY_TOL) & (t <= 1 + _BARY_TOL)
        found[ok] = cand[ok]
        weights[ok, 0] = 1.0 - t[ok]
        weights[ok, 1] = t[ok]
        return found, weights

    if mesh.grid is not None:
        lo, steps, (nx, ny) = mesh.grid
        fx = (pts[:, 0] - lo[0]) / steps[0]
        fy = (pts[:, 1] - lo[1]) / steps[1]
        i = np.clip(np.floor(fx).astype(np.int64), 0, nx - 2)
        j = np.clip(np.floor(fy).astype(np.int64), 0, ny - 2)
        u, w = fx - i, fy - j
        cell = j * (nx - 1) + i
        cand = np.where(u >= w, 2 * cell, 2 * cell + 1)
        bary = _barycentric(mesh, cand, pts)
        ok = np.all(bary >= -_BARY_TOL, axis=1)
        found[ok] = cand[ok]
        weights[ok] = bary[ok]
        todo = np.flatnonzero(~ok)
    else:
        todo = np.arange(m)
    if todo.size:
        cent = mesh.vertices[mesh.simplices].mean(axis=1)
        tree = cKDTree(cent)
        nn = min(12, len(cent))
        _, cands = tree.query(pts[todo], k=nn)
        cands = np.atleast_2d(cands)
        for c in range(nn):
            left = found[todo] < 0
            if not left.any():
                break
            idx = todo[left]
            cand = cands[left, c]
            bary = _barycentric(mesh, cand, pts[idx])
            ok = np.all(bary >= -_BARY_TOL, axis=1)
            found[idx[ok]] = cand[ok]
            weights[idx[ok]] = bary[ok]
        left = todo[found[todo] < 0]
        for p in left:
            allt = np.arange(len(mesh.simplices))
            bary = _barycentric(mesh, allt, np.repeat(pts[p:p + 1], len(allt), axis=0))
            ok = np.flatnonzero(np.all(bary >= -_BARY_TOL, axis=1))
            if ok.size:
                found[p] = ok[0]
                weights[p] = bary[ok[0]]
    return found, weights


def eval_basis_matrix(mesh: Mesh, points) -> sp.csr_matrix:
    """Tent-basis matrix: row ``l`` holds the barycentric weights of point ``l``.

    Raises
    ------
    PointOutsideMesh
        Listing the indices of points outside the mesh hull.
    """
    found, weights = locate_points(mesh, points)
    outside = np.flatnonzero(found < 0)
    if outside.size:
        raise PointOutsideMesh(outside)
    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum(axis=1, keepdims=True)
    m, k = weights.shape
    cols = mesh.simplices[found]
    a = sp.csr_matrix((weights.ravel(), (np.repeat(np.arange(m), k), cols.ravel())),
                      shape=(m, mesh.n_vertices))
    a.eliminate_zeros()
    return a


def piecewise_constant_basis(points, width: float, lower: float = 0.0, upper: float = 1.0):
    """Indicator basis of a regular partition of ``[lower, upper]`` into cells of ``width``.

    The last cell is truncated at ``upper`` when the width does not divide
    the interval.
    """
    x = np.asarray(points, dtype=float).reshape(-1)
    ncell = int(np.ceil((upper - lower) / width - 1e-9))
    idx = np.clip(np.floor((x - lower) / width).astype(np.int64), 0, ncell - 1)
    return sp.csr_matrix((np.ones(x.size), (np.arange(x.size), idx)), shape=(x.size, ncell))


@dataclass(frozen=True)
class FemOperators:
    """Lumped mass (diagonal, as a vector) and Neumann stiffness matrix."""

    lumped_mass: np.ndarray
    stiffness: sp.csr_matrix


def assemble_fem_operators(mesh: Mesh) -> FemOperators:
    v, s = mesh.vertices, mesh.simplices
    n = mesh.n_vertices
    meas = simplex_measures(mesh)
    if np.any(meas <= 0):
        raise DegenerateSimplex("mesh contains degenerate simplices")
    k = mesh.dimension + 1
    mass = np.zeros(n)
    np.add.at(mass, s.ravel(), np.repeat(meas / k, k))
    if mesh.dimension == 1:
        h = meas
        local = np.array([[1.0, -1.0], [-1.0, 1.0]])[None, :, :] / h[:, None, None]
    else:
        x, y = v[:, 0], v[:, 1]
        i0, i1, i2 = s[:, 0], s[:, 1], s[:, 2]
        b = np.column_stack([y[i1] - y[i2], y[i2] - y[i0], y[i0] - y[i1]])
        c = np.column_stack([x[i2] - x[i1], x[i0] - x[i2], x[i1] - x[i0]])
        local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * meas)[:, None, None]
    rows = np.repeat(s, k, axis=1).ravel()
    cols = np.tile(s, (1, k)).ravel()
    g = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    g.sum_duplicates()
    return FemOperators(mass, g)


class SpdeOperator:
    """Fast re-evaluation of the SPDE precision for changing parameter fields.

    The precision is ``T (K C K + K G + G K + G C^{-1} G) T`` with
    ``K = diag(kappa^2)`` and ``T = diag(tau)``. Its lower-triangle pattern is
    fixed, so new values are a vectorised product over stored entries.
    """

    def __init__(self, ops: FemOperators):
        c = np.asarray(ops.lumped_mass, dtype=float)
        g = sp.csr_matrix(ops.stiffness)
        h = (g @ sp.diags(1.0 / c) @ g).tocsr()
        n = len(c)
        pattern = (abs(h) + abs(g) + sp.eye(n)).tocsc()
        low = sp.tril(pattern, format="csc")
        low.sort_indices()
        self.n = n
        self.indptr = low.indptr.astype(np.int64)
        self.indices = low.indices.astype(np.int64)
        cols = np.repeat(np.arange(n), np.diff(self.indptr))
        self.rows = self.indices
        self.cols = cols
        self.g_vals = np.asarray(g[self.rows, self.cols]).ravel()
        self.h_vals = np.asarray(h[self.rows, self.cols]).ravel()
        self.is_diag = self.rows == self.cols
        self.mass = c

    def lower_values(self, tau, kappa) -> np.ndarray:
        """Lower-CSC values of the precision for vertex-wise ``tau`` and ``kappa``."""
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (self.n,))
        k2 = np.broadcast_to(np.asarray(kappa, dtype=float), (self.n,)) ** 2
        r, c = self.rows, self.cols
        vals = (k2[r] + k2[c]) * self.g_vals + self.h_vals
        vals[self.is_diag] += (k2 ** 2 * self.mass)[r[self.is_diag]]
        return tau[r] * tau[c] * vals

    def entry_values(self, rows, cols, g_vals, h_vals, is_diag, tau, kappa):
        """Same formula for an arbitrary subset of entries (used by block plans)."""
        k2r = kappa[rows] ** 2
        k2c = kappa[cols] ** 2
        vals = (k2r + k2c) * g_vals + h_vals
        vals = vals + np.where(is_diag, k2r * k2r * self.mass[rows], 0.0)
        return tau[rows] * tau[cols] * vals

    def precision(self, tau, kappa) -> SparseSymmetric:
        low = sp.csc_matrix((self.lower_values(tau, kappa), self.indices, self.indptr),
                            shape=(self.n, self.n))
        return SparseSymmetric(low)

    def full_pattern(self) -> sp.csr_matrix:
        """Symmetric 0/1 pattern of the precision (the GMRF neighbourhood graph)."""
        low = sp.csc_matrix((np.ones(self.indices.size), self.indices, self.indptr),
                            shape=(self.n, self.n))
        return ((low + low.T) > 0).astype(float).tocsr()


def assemble_spde_precision(ops: FemOperators, kappa_at_vertices, tau_at_vertices) -> SparseSymmetric:
    """SPDE (alpha = 2) precision with vertex-wise ``kappa`` and ``tau``."""
    kappa = np.asarray(kappa_at_vertices, dtype=float)
    tau = np.asarray(tau_at_vertices, dtype=float)
    n = len(ops.lumped_mass)
    if kappa.shape != (n,) or tau.shape != (n,):
        raise ValueError(f"parameter vectors must have length {n}")
    if np.any(kappa <= 0) or np.any(tau <= 0):
        raise NonPositiveParameter("kappa and tau must be strictly positive")
    return SpdeOperator(ops).precision(tau, kappa)


def assemble_ar1_precision(n: int, phi: float, sigma_v_sq: float) -> SparseSymmetric:
    """Tridiagonal AR(1) precision with stationary boundaries."""
    if n < 2:
        raise ValueError("n must be at least 2")
    if not -1.0 < phi < 1.0:
        raise InvalidPhi(f"phi must lie in (-1, 1), got {phi}")
    if not sigma_v_sq > 0:
        raise NonPositiveParameter("sigma_v_sq must be positive")
    diag = np.full(n, 1.0 + phi * phi)
    diag[0] = diag[-1] = 1.0
    off = np.full(n - 1, -phi)
    m = sp.diags([off, diag, off], [-1, 0, 1], shape=(n, n)) / sigma_v_sq
    return SparseSymmetric(m)


def data_footprint(basis, coefficient_indices) -> np.ndarray:
    """Rows (data points) with a nonzero basis weight in any of the given columns."""
    idx = np.asarray(sorted(set(int(i) for i in np.atleast_1d(coefficient_indices))), dtype=np.int64)
    if idx.size == 0:
        return np.empty(0, dtype=np.int64)
    sub = sp.csc_matrix(basis)[:, idx]
    sub.eliminate_zeros()
    return np.unique(sub.indices).astype(np.int64)


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["vertices"]
    for i, v in enumerate(mesh.vertices):
        lines.append(" ".join([str(i + 1)] + [repr(float(c)) for c in v]))
    lines.append("simplices")
    for s in mesh.simplices:
        lines.append(" ".join(str(int(i) + 1) for i in s))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    verts, simps, block = [], [], None
    for line in Path(path).read_text().splitlines():
        t = line.strip()
        if not t:
            continue
        if t in ("vertices", "simplices"):
            block = t
            continue
        parts = t.split()
        if block == "vertices":
            verts.append([float(p) for p in parts[1:]])
        elif block == "simplices":
            simps.append([int(p) - 1 for p in parts])
    v = np.asarray(verts)
    return Mesh(v.shape[1], v, np.asarray(simps))
