"""Block plans: precomputed index maps for local Gaussian conditionals.

A plan covers one block ``T`` of process coefficients at one scale. It
stores which stored entries of the process precision fall in ``Q_TT`` and in
the cross block ``Q_TN`` (``N`` the Markov blanket of ``T``), the data rows
``F`` touched by ``T``, and the pattern of ``A_FT^T W A_FT + Q_TT``. With
these, building the local conditional for new parameters or new data
weights is a handful of vectorised gathers plus one numeric factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import IndexOutOfRange
from ..sparse import (CanonicalGaussian, SparseSymmetric, analyse, backsolve_transpose,
                      factorize_values, solve, solve_lower)


def _lower_pattern(n, rows, cols):
    """Sorted lower-CSC pattern of the (row, col) pairs; returns slots per pair."""
    r = np.maximum(rows, cols)
    c = np.minimum(rows, cols)
    key = c * n + r
    uniq, slot = np.unique(key, return_inverse=True)
    pr, pc = uniq % n, uniq // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(pc, minlength=n), out=indptr[1:])
    return indptr, pr.astype(np.int64), slot.astype(np.int64)


def minimal_footprint(weights: np.ndarray, graph: sp.csr_matrix, rings: int = 0) -> np.ndarray:
    """Process vertices whose own weight and all neighbours' weights are positive.

    ``weights`` is one parameter basis function evaluated at the process
    vertices and ``graph`` the process neighbourhood graph. ``rings`` extra
    neighbourhood rings are added as a buffer.
    """
    pos = np.asarray(weights).reshape(-1) > 1e-12
    bad_nbr = (graph @ (~pos).astype(float)) > 0
    inside = pos & ~bad_nbr
    for _ in range(int(rings)):
        inside = inside | ((graph @ inside.astype(float)) > 0)
    return np.flatnonzero(inside).astype(np.int64)


@dataclass
class FootprintSpec:
    """Effective process footprint ``process`` and data footprint ``data`` of one block."""

    process: np.ndarray
    data: np.ndarray


class BlockPlan:
    """Local conditional machinery for process block ``T`` of one scale."""

    def __init__(self, prior, basis_rows_provider, k: int, block, graph: sp.csr_matrix):
        n = prior.n
        t = np.unique(np.asarray(block, dtype=np.int64))
        if t.size and (t[0] < 0 or t[-1] >= n):
            raise IndexOutOfRange("block index outside process dimension")
        self.k = k
        self.T = t
        self.nT = t.size
        in_t = np.zeros(n, dtype=bool)
        in_t[t] = True
        loc = np.full(n, -1, dtype=np.int64)
        loc[t] = np.arange(t.size)
        r, c = prior.rows, prior.cols
        tt = np.flatnonzero(in_t[r] & in_t[c])
        tn = np.flatnonzero(in_t[r] ^ in_t[c])
        self.e_all = np.concatenate([tt, tn])
        self.n_tt = tt.size
        t_side = np.where(in_t[r[tn]], r[tn], c[tn])
        self.tn_local = loc[t_side]
        self.tn_other = np.where(in_t[r[tn]], c[tn], r[tn])
        self.N = np.unique(self.tn_other)
        # Q_TT keeps the global lower-CSC order because T is sorted
        lr, lc = loc[r[tt]], loc[c[tt]]
        self.qtt_indptr = np.zeros(self.nT + 1, dtype=np.int64)
        np.cumsum(np.bincount(lc, minlength=self.nT), out=self.qtt_indptr[1:])
        self.qtt_indices = lr.astype(np.int64)
        self.sym_prior = analyse(self.nT, self.qtt_indptr, self.qtt_indices) if self.nT else None

        # data footprint and A_FT
        if t.size:
            full = basis_rows_provider.column_block(k, t)
            f_rows = np.unique(full.nonzero()[0]).astype(np.int64)
        else:
            f_rows = np.zeros(0, dtype=np.int64)
        self.F = f_rows
        if f_rows.size:
            a = sp.csr_matrix(basis_rows_provider.rows(k, f_rows)[:, t])
            a.eliminate_zeros()
        else:
            a = sp.csr_matrix((0, self.nT))
        self.A = a
        self.AT = a.T.tocsr()
        coo = a.tocoo()
        # all (i, j) products within each data row
        order = np.argsort(coo.row, kind="stable")
        rows_d, cols_d, vals_d = coo.row[order], coo.col[order], coo.data[order]
        starts = np.searchsorted(rows_d, np.arange(a.shape[0]))
        ends = np.searchsorted(rows_d, np.arange(a.shape[0]), side="right")
        pi, pj, prow, pcoef = [], [], [], []
        lens = ends - starts
        for ln in np.unique(lens):
            if ln == 0:
                continue
            sel = np.flatnonzero(lens == ln)
            base = starts[sel]
            for u in range(ln):
                for v in range(u + 1):
                    iu, iv = base + u, base + v
                    pi.append(cols_d[iu])
                    pj.append(cols_d[iv])
                    prow.append(sel)
                    pcoef.append(vals_d[iu] * vals_d[iv])
        if pi:
            pi, pj = np.concatenate(pi), np.concatenate(pj)
            prow, pcoef = np.concatenate(prow), np.concatenate(pcoef)
        else:
            pi = pj = prow = np.zeros(0, dtype=np.int64)
            pcoef = np.zeros(0)
        all_r = np.concatenate([lr, pi]).astype(np.int64)
        all_c = np.concatenate([lc, pj]).astype(np.int64)
        if self.nT:
            self.post_indptr, self.post_indices, slots = _lower_pattern(self.nT, all_r, all_c)
            self.slot_q = slots[:self.n_tt]
            self.slot_a = slots[self.n_tt:]
            self.sym_post = analyse(self.nT, self.post_indptr, self.post_indices)
            self.n_post = self.post_indices.size
        self.pair_row = prow.astype(np.int64)
        self.pair_coef = pcoef
        self.z_F = basis_rows_provider.values(f_rows)

    # -- local pieces ---------------------------------------------------
    def prior_terms(self, prior, tau, kappa, eta_k):
        """Stored values of ``Q_TT`` and the vector ``c = Q_TN eta_N``."""
        v = prior.entry_values(self.e_all, tau, kappa)
        qtt = v[:self.n_tt]
        vtn = v[self.n_tt:]
        c = np.bincount(self.tn_local, weights=vtn * eta_k[self.tn_other], minlength=self.nT)
        return qtt, c

    def posterior_values(self, qtt, w_f):
        vals = np.bincount(self.slot_q, weights=qtt, minlength=self.n_post)
        if self.pair_row.size:
            vals += np.bincount(self.slot_a, weights=self.pair_coef * w_f[self.pair_row],
                                minlength=self.n_post)
        return vals

    def ztilde(self, fit_total, eta_k):
        """Data on ``F`` with every contribution except ``A_FT eta_T`` removed."""
        if not self.F.size:
            return np.zeros(0)
        return self.z_F - fit_total[self.F] + self.A @ eta_k[self.T]

    def evaluate(self, prior, tau, kappa, eta_k, w, fit_total, with_density=True):
        """Collapsed log density and the conditional of ``eta_T``.

        Returns ``(log_density, factor, shift)`` where ``factor`` factors the
        conditional precision ``A^T W A + Q_TT`` and ``shift`` is its
        canonical shift. ``log_density`` is ``None`` unless requested.
        """
        qtt, c = self.prior_terms(prior, tau, kappa, eta_k)
        w_f = w[self.F] if self.F.size else np.zeros(0)
        zt = self.ztilde(fit_total, eta_k)
        fpost = factorize_values(self.sym_post, self.posterior_values(qtt, w_f))
        b = (self.AT @ (w_f * zt) if self.F.size else 0.0) - c
        ld = None
        if with_density:
            fprior = factorize_values(self.sym_prior, qtt)
            u = solve_lower(fprior, c)
            s = solve_lower(fpost, b)
            ld = (0.5 * float(np.sum(np.log(w_f))) - 0.5 * float(np.dot(w_f * zt, zt))
                  - 0.5 * w_f.size * math.log(2.0 * math.pi)
                  + 0.5 * fprior.logdet - 0.5 * float(np.dot(u, u))
                  - 0.5 * fpost.logdet + 0.5 * float(np.dot(s, s)))
        return ld, fpost, b

    def draw(self, factor, shift, rng):
        mean = solve(factor, shift)
        return mean + backsolve_transpose(factor, rng.standard_normal(self.nT))

    def reads(self):
        return np.union1d(self.T, self.N)


class RowsProvider:
    """Adapter giving plans access to basis columns and data chunks."""

    def __init__(self, spec):
        self.spec = spec
        self._csc = {}

    def column_block(self, k, cols):
        if k not in self._csc:
            self._csc[k] = sp.csc_matrix(self.spec.scales[k].basis)
        return self._csc[k][:, cols]

    def rows(self, k, idx):
        return self.spec.chunks.rows(k, idx)

    def values(self, idx):
        return self.spec.chunks.values(idx)


def gmrf_block_conditional(q: SparseSymmetric, block, rest_values) -> CanonicalGaussian:
    """Conditional of a zero-mean GMRF block given the remaining coefficients.

    Returns ``(Q_TT, -Q_T,rest eta_rest)`` in canonical form. ``rest_values``
    holds the complement's values in ascending index order, or a full-length
    vector whose block entries are ignored.
    """
    n = q.dim
    t = np.unique(np.asarray(block, dtype=np.int64))
    if t.size == 0:
        raise IndexOutOfRange("block must be nonempty")
    if t[0] < 0 or t[-1] >= n:
        raise IndexOutOfRange(f"block indices must lie in [0, {n})")
    rest = np.setdiff1d(np.arange(n), t)
    vals = np.asarray(rest_values, dtype=float).reshape(-1)
    if vals.size == n:
        vals = vals[rest]
    elif vals.size != rest.size:
        raise IndexOutOfRange(f"rest_values has length {vals.size}, expected {rest.size} or {n}")
    full = q.to_scipy()
    qtt = full[t][:, t]
    shift = -(full[t][:, rest] @ vals) if rest.size else np.zeros(t.size)
    return CanonicalGaussian(SparseSymmetric(qtt), shift)


@dataclass
class AdaptiveProposal:
    """Random-walk proposal with Robbins-Monro scaling of the step variance."""

    step_variance: float = 0.001
    adapt_every: int = 30
    adapt_until: int = 2000
    target_accept: float = 0.44
    accepted: int = 0
    proposed: int = 0
    total_accepted: int = 0
    total_proposed: int = 0
    n_adaptations: int = 0

    def __post_init__(self):
        if not self.step_variance > 0:
            raise ValueError("step_variance must be positive")

    def record(self, accepted: bool):
        self.proposed += 1
        self.total_proposed += 1
        if accepted:
            self.accepted += 1
            self.total_accepted += 1

    def maybe_adapt(self, iteration: int):
        """Rescale after every ``adapt_every`` completed iterations up to ``adapt_until``."""
        if iteration > self.adapt_until or iteration % self.adapt_every or not self.proposed:
            return
        rate = self.accepted / self.proposed
        self.n_adaptations += 1
        gain = 1.0 / math.sqrt(self.n_adaptations)
        self.step_variance *= math.exp(2.0 * gain * (rate - self.target_accept) * 2.0)
        self.step_variance = min(max(self.step_variance, 1e-8), 1e2)
        self.accepted = 0
        self.proposed = 0

    @property
    def acceptance_rate(self) -> float:
        return self.total_accepted / self.total_proposed if self.total_proposed else float("nan")
