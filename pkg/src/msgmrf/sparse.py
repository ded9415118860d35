"""Sparse symmetric matrices, Cholesky factorization and GMRF sampling.

The factorization is split the usual way: a *symbolic* stage that depends on
the sparsity pattern only (fill-reducing ordering, elimination tree, column
counts) and a *numeric* stage. Symbolic analyses are cached by pattern, so
the many refactorizations of a fixed pattern inside the sampler only pay for
the numeric stage.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import DimensionMismatch, NotPositiveDefinite
from .ordering import inverse_permutation, minimum_degree

# Relative pivot tolerance against the largest diagonal entry.
PIVOT_RTOL = 1e-12


class SparseSymmetric:
    """Symmetric matrix stored as the lower triangle in CSC form.

    Parameters
    ----------
    matrix : array_like or scipy sparse matrix
        Square matrix. Only its lower triangle is read; the upper triangle is
        implied by symmetry.
    """

    __slots__ = ("_lower",)

    def __init__(self, matrix):
        if sp.issparse(matrix):
            m = sp.csc_matrix(matrix)
        else:
            m = sp.csc_matrix(np.atleast_2d(np.asarray(matrix, dtype=float)))
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {m.shape}")
        if m.shape[0] < 1:
            raise DimensionMismatch("dim must be >= 1")
        low = sp.tril(m, format="csc").astype(float)
        low.sum_duplicates()
        low.eliminate_zeros()
        low.sort_indices()
        low.indptr = low.indptr.astype(np.int64)
        low.indices = low.indices.astype(np.int64)
        self._lower = low

    @classmethod
    def from_triplets(cls, dim, rows, cols, values):
        """Build from (row, col, value) triplets; duplicates are summed.

        Entries above the diagonal are reflected into the lower triangle.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        r = np.maximum(rows, cols)
        c = np.minimum(rows, cols)
        m = sp.coo_matrix((np.asarray(values, dtype=float), (r, c)), shape=(dim, dim))
        return cls(m)

    @property
    def dim(self) -> int:
        return self._lower.shape[0]

    @property
    def lower(self) -> sp.csc_matrix:
        return self._lower

    @property
    def nnz(self) -> int:
        return self._lower.nnz

    def diagonal(self) -> np.ndarray:
        return self._lower.diagonal()

    def to_scipy(self) -> sp.csr_matrix:
        low = self._lower
        strict = sp.tril(low, k=-1)
        return (low + strict.T).tocsr()

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def __matmul__(self, other):
        return self.to_scipy() @ other

    def __mul__(self, scalar):
        return SparseSymmetric(self._lower * float(scalar))

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, SparseSymmetric):
            return NotImplemented
        return SparseSymmetric(self._lower + other._lower)

    def __repr__(self):
        return f"SparseSymmetric(dim={self.dim}, nnz_lower={self.nnz})"


@dataclass(frozen=True)
class Symbolic:
    """Pattern-only analysis shared by every matrix with the same pattern."""

    n: int
    perm: np.ndarray
    pinv: np.ndarray
    cp: np.ndarray
    ci: np.ndarray
    dest: np.ndarray
    parent: np.ndarray
    lp: np.ndarray
    diag_pos: np.ndarray


_symbolic_cache: dict[tuple, Symbolic] = {}
_cache_lock = threading.Lock()


def analyse(n: int, indptr: np.ndarray, indices: np.ndarray) -> Symbolic:
    """Symbolic analysis of a lower-CSC pattern (cached by pattern)."""
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    key = (n, indptr.tobytes(), indices.tobytes())
    with _cache_lock:
        hit = _symbolic_cache.get(key)
    if hit is not None:
        return hit
    perm = minimum_degree(n, indptr, indices)
    pinv = inverse_permutation(perm)
    cp, ci, dest = _kernels.permute_to_upper(n, indptr, indices, pinv)
    parent = _kernels.etree(n, cp, ci)
    counts = _kernels.column_counts(n, cp, ci, parent)
    lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=lp[1:])
    diag_pos = np.empty(n, dtype=np.int64)
    for col in range(n):
        seg = indices[indptr[col]:indptr[col + 1]]
        hit_pos = np.flatnonzero(seg == col)
        # missing diagonal -> point at a sentinel slot; the pivot check fails later
        diag_pos[col] = indptr[col] + hit_pos[0] if hit_pos.size else -1
    sym = Symbolic(n, perm, pinv, cp, ci, dest, parent, lp, diag_pos)
    with _cache_lock:
        _symbolic_cache[key] = sym
    return sym


@dataclass(frozen=True)
class CholeskyFactor:
    """``L L^T = P Q P^T`` with ``P`` the permutation ``perm[new] = old``."""

    symbolic: Symbolic
    li: np.ndarray
    lx: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.symbolic.n

    @property
    def permutation(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def lower_factor(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.lx, self.li, s.lp), shape=(s.n, s.n))


def factorize_values(sym: Symbolic, values: np.ndarray) -> CholeskyFactor:
    """Numeric factorization for lower-CSC ``values`` matching ``sym``'s pattern."""
    values = np.asarray(values, dtype=np.float64)
    n = sym.n
    diag = np.where(sym.diag_pos >= 0, values[sym.diag_pos], 0.0)
    scale = float(np.max(np.abs(diag))) if n else 0.0
    if not np.all(np.isfinite(values)):
        raise NotPositiveDefinite("non-finite entries in matrix")
    cx = np.empty_like(values)
    cx[sym.dest] = values
    li, lx, status = _kernels.numeric_cholesky(n, sym.cp, sym.ci, cx, sym.parent, sym.lp,
                                               PIVOT_RTOL * scale)
    if status >= 0 or scale <= 0.0:
        raise NotPositiveDefinite(pivot=int(sym.perm[status]) if status >= 0 else None)
    logdet = 2.0 * float(np.sum(np.log(lx[sym.lp[:-1]])))
    return CholeskyFactor(sym, li, lx, logdet)


def cholesky_factorize(q: SparseSymmetric) -> CholeskyFactor:
    """Sparse Cholesky factorization with a minimum-degree permutation.

    Raises
    ------
    NotPositiveDefinite
        If a pivot drops below ``1e-12`` times the largest diagonal entry.
    """
    low = q.lower
    sym = analyse(q.dim, low.indptr, low.indices)
    return factorize_values(sym, low.data)


def _as_columns(rhs, n):
    b = np.asarray(rhs, dtype=np.float64)
    vector = b.ndim == 1
    b2 = b.reshape(-1, 1) if vector else b
    if b2.shape[0] != n:
        raise DimensionMismatch(f"rhs has {b2.shape[0]} rows, factor has dim {n}")
    return b2, vector


def solve(factor: CholeskyFactor, rhs) -> np.ndarray:
    """Solve ``Q X = rhs`` for a vector or a matrix right-hand side."""
    s = factor.symbolic
    b, vector = _as_columns(rhs, s.n)
    work = np.ascontiguousarray(b[s.perm])
    _kernels.lsolve(s.n, s.lp, factor.li, factor.lx, work)
    _kernels.ltsolve(s.n, s.lp, factor.li, factor.lx, work)
    out = np.empty_like(work)
    out[s.perm] = work
    return out[:, 0] if vector else out


def solve_lower(factor: CholeskyFactor, rhs) -> np.ndarray:
    """``L^{-1} P rhs``; its squared norm is ``rhs^T Q^{-1} rhs``."""
    s = factor.symbolic
    b, vector = _as_columns(rhs, s.n)
    work = np.ascontiguousarray(b[s.perm])
    _kernels.lsolve(s.n, s.lp, factor.li, factor.lx, work)
    return work[:, 0] if vector else work


def backsolve_transpose(factor: CholeskyFactor, z) -> np.ndarray:
    """``P^T L^{-T} z``: maps standard normals to ``Gau(0, Q^{-1})`` draws."""
    s = factor.symbolic
    b, vector = _as_columns(z, s.n)
    work = np.array(b, dtype=np.float64, order="C", copy=True)
    _kernels.ltsolve(s.n, s.lp, factor.li, factor.lx, work)
    out = np.empty_like(work)
    out[s.perm] = work
    return out[:, 0] if vector else out


def logdet(factor: CholeskyFactor) -> float:
    return factor.logdet


@dataclass(frozen=True)
class CanonicalGaussian:
    """Gaussian in information form: ``precision`` and ``shift = precision @ mean``."""

    precision: SparseSymmetric
    shift: np.ndarray

    def __post_init__(self):
        shift = np.asarray(self.shift, dtype=float).reshape(-1)
        if shift.size != self.precision.dim:
            raise DimensionMismatch(
                f"shift length {shift.size} != precision dim {self.precision.dim}")
        object.__setattr__(self, "shift", shift)

    @property
    def dim(self) -> int:
        return self.precision.dim

    def mean(self) -> np.ndarray:
        return solve(cholesky_factorize(self.precision), self.shift)


def draw_from_factor(factor: CholeskyFactor, shift: np.ndarray, rng: np.random.Generator):
    """One draw from ``Gau(Q^{-1} shift, Q^{-1})`` given the factor of ``Q``.

    Returns ``(sample, mean)``.
    """
    mean = solve(factor, shift)
    z = rng.standard_normal(factor.dim)
    return mean + backsolve_transpose(factor, z), mean


def sample_canonical(g: CanonicalGaussian, rng_seed) -> np.ndarray:
    """Exact draw from ``Gau(precision^{-1} shift, precision^{-1})``.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    factor = cholesky_factorize(g.precision)
    sample, _ = draw_from_factor(factor, g.shift, rng)
    return sample


def write_matrix_market(q: SparseSymmetric, path) -> None:
    """Plain-text export: header ``dim nnz`` then 1-based ``i j value`` lines (lower triangle)."""
    coo = q.lower.tocoo()
    order = np.lexsort((coo.row, coo.col))
    lines = [f"{q.dim} {coo.nnz}"]
    for t in order:
        lines.append(f"{coo.row[t] + 1} {coo.col[t] + 1} {float(coo.data[t])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> SparseSymmetric:
    text = Path(path).read_text().split("\n")
    rows_text = [ln for ln in text if ln.strip() and not ln.lstrip().startswith("%")]
    dim, nnz = (int(v) for v in rows_text[0].split())
    body = rows_text[1:]
    if len(body) != nnz:
        raise DimensionMismatch(f"header declares {nnz} entries, found {len(body)}")
    if nnz == 0:
        return SparseSymmetric(sp.csc_matrix((dim, dim)))
    parts = np.array([ln.split() for ln in body], dtype=object)
    i = parts[:, 0].astype(np.int64) - 1
    j = parts[:, 1].astype(np.int64) - 1
    v = parts[:, 2].astype(float)
    return SparseSymmetric.from_triplets(dim, i, j, v)
