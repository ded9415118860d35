"""Model specification, sampler state and the chunked data contract."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..colouring import Tiling
from ..errors import ConfigError, DimensionMismatch
from ..mesh import Mesh, SpdeOperator, assemble_fem_operators
from ..params import GaussianPrior, natural_fields, smoothness_for
from ..sparse import SparseSymmetric


class GuidelineWarning(UserWarning):
    """Model sizes outside the recommended ranges (not an error)."""


class SpdePrior:
    """Process prior ``Q(tau, kappa)`` from the SPDE on a mesh.

    Exposes the fixed lower-CSC pattern of the precision and the values of
    any subset of stored entries for vertex-wise ``tau`` and ``kappa``.
    """

    def __init__(self, mesh: Mesh, nu: float | None = None):
        self.mesh = mesh
        self.dimension = mesh.dimension
        self.nu = smoothness_for(mesh.dimension) if nu is None else float(nu)
        self.op = SpdeOperator(assemble_fem_operators(mesh))
        self.n = self.op.n
        self.indptr, self.indices = self.op.indptr, self.op.indices
        self.rows, self.cols = self.op.rows, self.op.cols
        self.parametric = True

    def fields(self, log_sigma, log_rho):
        return natural_fields(log_sigma, log_rho, self.nu, self.dimension)

    def entry_values(self, e, tau, kappa) -> np.ndarray:
        op = self.op
        return op.entry_values(op.rows[e], op.cols[e], op.g_vals[e], op.h_vals[e],
                               op.is_diag[e], tau, kappa)

    def precision(self, tau, kappa) -> SparseSymmetric:
        return self.op.precision(tau, kappa)

    def graph(self) -> sp.csr_matrix:
        """Process GMRF neighbourhood graph (no self loops)."""
        g = self.op.full_pattern().tolil()
        g.setdiag(0)
        g = g.tocsr()
        g.eliminate_zeros()
        return g


class FixedPrior:
    """Parameter-free process prior with a fixed precision matrix."""

    def __init__(self, q: SparseSymmetric):
        low = q.lower
        self.n = q.dim
        self.indptr = low.indptr.astype(np.int64)
        self.indices = low.indices.astype(np.int64)
        self.rows = self.indices
        self.cols = np.repeat(np.arange(self.n), np.diff(self.indptr))
        self.values = low.data.copy()
        self.parametric = False
        self.dimension = None

    def fields(self, log_sigma, log_rho):
        return np.ones(self.n), np.ones(self.n)

    def entry_values(self, e, tau, kappa) -> np.ndarray:
        return self.values[e]

    def precision(self, tau=None, kappa=None) -> SparseSymmetric:
        low = sp.csc_matrix((self.values, self.indices, self.indptr), shape=(self.n, self.n))
        return SparseSymmetric(low)

    def graph(self) -> sp.csr_matrix:
        low = sp.csc_matrix((np.ones(self.indices.size), self.indices, self.indptr),
                            shape=(self.n, self.n))
        g = ((low + low.T) > 0).astype(float).tolil()
        g.setdiag(0)
        g = g.tocsr()
        g.eliminate_zeros()
        return g


@dataclass
class ScaleSpec:
    """One scale ``k``: data basis ``A_k``, process prior and parameter basis.

    ``param_basis`` is ``(r_eta, r_theta)``: the parameter basis functions
    evaluated at the process vertices. Scale 0 uses a single constant column.
    ``tile_extent = None`` means one tile covering the whole scale.
    """

    basis: sp.csr_matrix
    prior: object
    param_basis: sp.csr_matrix | None = None
    prior_sigma: GaussianPrior | None = None
    prior_rho: GaussianPrior | None = None
    mesh: Mesh | None = None
    tile_extent: float | None = None
    tilings: tuple | None = None
    min_data: int = 100
    min_basis: int = 200
    footprint_rings: int = 0
    name: str = ""

    def __post_init__(self):
        self.basis = sp.csr_matrix(self.basis)
        if self.basis.shape[1] != self.prior.n:
            raise DimensionMismatch(
                f"basis has {self.basis.shape[1]} columns, prior has dim {self.prior.n}")
        if self.param_basis is not None:
            self.param_basis = sp.csr_matrix(self.param_basis)
            if self.param_basis.shape[0] != self.prior.n:
                raise DimensionMismatch("parameter basis rows must match process dimension")
            if self.prior_sigma is None or self.prior_rho is None:
                raise ConfigError("a parametric scale needs priors for sigma and rho")

    @property
    def n_eta(self) -> int:
        return self.prior.n

    @property
    def n_theta(self) -> int:
        return 0 if self.param_basis is None else self.param_basis.shape[1]


class InMemoryChunks:
    """Default chunk provider: everything already in memory."""

    def __init__(self, z, bases, eps_basis):
        self._z = np.asarray(z, dtype=float)
        self._bases = [sp.csr_matrix(b) for b in bases]
        self._eps = sp.csr_matrix(eps_basis)

    @property
    def n_data(self) -> int:
        return self._z.size

    def values(self, idx) -> np.ndarray:
        return self._z[np.asarray(idx, dtype=np.int64)]

    def rows(self, k: int, idx) -> sp.csr_matrix:
        return self._bases[k][np.asarray(idx, dtype=np.int64)]

    def eps_rows(self, idx) -> sp.csr_matrix:
        return self._eps[np.asarray(idx, dtype=np.int64)]


class FileChunks:
    """Chunk provider backed by ``.npy`` files, memory-mapped on demand.

    Only the rows requested for a footprint are read from disk.
    """

    def __init__(self, directory):
        self.dir = Path(directory)
        self._z = np.load(self.dir / "z.npy", mmap_mode="r")
        self._cache = {}

    @staticmethod
    def write(directory, z, bases, eps_basis) -> "FileChunks":
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "z.npy", np.asarray(z, dtype=float))
        for name, b in [(f"A{k}", bb) for k, bb in enumerate(bases)] + [("eps", eps_basis)]:
            b = sp.csr_matrix(b)
            np.save(d / f"{name}_indptr.npy", b.indptr.astype(np.int64))
            np.save(d / f"{name}_indices.npy", b.indices.astype(np.int64))
            np.save(d / f"{name}_data.npy", b.data)
            np.save(d / f"{name}_shape.npy", np.array(b.shape, dtype=np.int64))
        return FileChunks(d)

    @property
    def n_data(self) -> int:
        return self._z.shape[0]

    def _arrays(self, name):
        if name not in self._cache:
            self._cache[name] = tuple(np.load(self.dir / f"{name}_{part}.npy", mmap_mode="r")
                                      for part in ("indptr", "indices", "data", "shape"))
        return self._cache[name]

    def _rows(self, name, idx):
        indptr, indices, data, shape = self._arrays(name)
        idx = np.asarray(idx, dtype=np.int64)
        starts, ends = np.asarray(indptr[idx]), np.asarray(indptr[idx + 1])
        lens = ends - starts
        sel = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) \
            if idx.size else np.zeros(0, dtype=np.int64)
        ptr = np.zeros(idx.size + 1, dtype=np.int64)
        np.cumsum(lens, out=ptr[1:])
        return sp.csr_matrix((np.asarray(data[sel]), np.asarray(indices[sel]), ptr),
                             shape=(idx.size, int(shape[1])))

    def values(self, idx) -> np.ndarray:
        return np.asarray(self._z[np.asarray(idx, dtype=np.int64)], dtype=float)

    def rows(self, k: int, idx) -> sp.csr_matrix:
        return self._rows(f"A{k}", idx)

    def eps_rows(self, idx) -> sp.csr_matrix:
        return self._rows("eps", idx)


@dataclass
class ModelSpec:
    """The multi-scale model: ``Z = sum_k A_k eta_k + eps``.

    ``eps_basis`` is ``(m, r_eps)`` with ``log sigma_eps(s_l) = eps_basis[l] @ theta_eps``.
    ``eps_graph`` optionally gives the adjacency of the measurement-error
    parameter mesh; data sharing between coefficients always adds edges.
    """

    z: np.ndarray
    scales: list
    eps_basis: sp.csr_matrix
    eps_prior: GaussianPrior
    eps_graph: sp.csr_matrix | None = None
    chunks: object = None
    eta0_bounds: tuple = (100, 100_000)
    refinement_bounds: tuple = (4.0, 1000.0)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        self.eps_basis = sp.csr_matrix(self.eps_basis)
        m = self.z.size
        if not self.scales:
            raise ConfigError("at least one scale is required")
        for k, s in enumerate(self.scales):
            if s.basis.shape[0] != m:
                raise DimensionMismatch(f"scale {k} basis has {s.basis.shape[0]} rows, data has {m}")
        if self.eps_basis.shape[0] != m:
            raise DimensionMismatch("measurement-error basis rows must match data length")
        if not np.all(np.isfinite(self.z)):
            raise ConfigError("data contain non-finite values")
        if self.chunks is None:
            self.chunks = InMemoryChunks(self.z, [s.basis for s in self.scales], self.eps_basis)
        self.validate()

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def n_data(self) -> int:
        return self.z.size

    @property
    def n_eps(self) -> int:
        return self.eps_basis.shape[1]

    def validate(self) -> list[str]:
        """Check the sizing guidelines; returns (and warns about) any issues."""
        notes = []
        sizes = [s.n_eta for s in self.scales]
        for k in range(1, len(sizes)):
            if sizes[k] <= sizes[k - 1]:
                raise ConfigError(f"process meshes must refine with k: sizes {sizes}")
        lo, hi = self.eta0_bounds
        if not lo <= sizes[0] <= hi:
            notes.append(f"scale-0 dimension {sizes[0]} outside guideline range [{lo}, {hi}]")
        rlo, rhi = self.refinement_bounds
        for k in range(1, len(sizes)):
            ratio = sizes[k] / sizes[k - 1]
            if not rlo <= ratio <= rhi:
                notes.append(f"scale {k} has {ratio:.1f}x the coefficients of scale {k - 1}; "
                             f"guideline is about 100x")
        for note in notes:
            warnings.warn(note, GuidelineWarning, stacklevel=3)
        return notes


def constant_param_basis(n: int) -> sp.csr_matrix:
    return sp.csr_matrix(np.ones((n, 1)))


@dataclass
class ModelState:
    """Current Gibbs state.

    ``theta[k]`` has shape ``(r_theta_k, 2)`` holding ``(log sigma, log rho)``
    coefficients; scale 0 has a single row.
    """

    eta: list
    theta: list
    theta_eps: np.ndarray
    iteration: int = 0
    tiling_position: int = 0
    counters: Counter = field(default_factory=Counter)

    @property
    def theta0(self) -> np.ndarray:
        return self.theta[0][0]

    def copy(self) -> "ModelState":
        return ModelState([e.copy() for e in self.eta], [t.copy() for t in self.theta],
                          self.theta_eps.copy(), self.iteration, self.tiling_position,
                          Counter(self.counters))


def scale_fields(scale: ScaleSpec, theta_k: np.ndarray):
    """Vertex-wise ``(tau, kappa)`` of scale ``k`` for coefficients ``theta_k``."""
    if scale.param_basis is None:
        return scale.prior.fields(None, None)
    b = scale.param_basis
    return scale.prior.fields(b @ theta_k[:, 0], b @ theta_k[:, 1])


def scale_precision(scale: ScaleSpec, theta_k: np.ndarray) -> SparseSymmetric:
    tau, kappa = scale_fields(scale, theta_k)
    return scale.prior.precision(tau, kappa)


def eps_std(spec: ModelSpec, theta_eps) -> np.ndarray:
    return np.exp(spec.eps_basis @ np.asarray(theta_eps, dtype=float))


def default_tilings(scale: ScaleSpec, data_counts=None):
    """The three tilings of a scale (explicit, built from the mesh, or trivial)."""
    if scale.tilings is not None:
        return tuple(scale.tilings)
    n = scale.n_eta
    if scale.tile_extent is None or scale.mesh is None:
        whole = Tiling.from_tiles([np.arange(n)], n, 1)
        return (whole, whole, whole)
    from ..colouring import build_tilings
    return build_tilings(scale.mesh, scale.tile_extent, scale.min_data, scale.min_basis,
                         data_counts=data_counts, adjacency=scale.prior.graph())
