"""Numba kernels for the up-looking sparse Cholesky factorization.

All matrices are compressed-sparse-column with int64 index arrays. ``C``
denotes the permuted matrix ``P A P^T`` stored as its *upper* triangle,
``L`` the lower factor with the diagonal entry first in each column.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def etree(n, cp, ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(cp[k], cp[k + 1]):
            i = ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True, nogil=True)
def _ereach(cp, ci, k, parent, s, w, n):
    top = n
    w[k] = k
    for p in range(cp[k], cp[k + 1]):
        i = ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@njit(cache=True, nogil=True)
def column_counts(n, cp, ci, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(cp, ci, k, parent, s, w, n)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True, nogil=True)
def numeric_cholesky(n, cp, ci, cx, parent, lp, tol):
    """Return ``(li, lx, status)``; status is -1 on success else the bad pivot."""
    nnz = lp[n]
    li = np.empty(nnz, dtype=np.int64)
    lx = np.empty(nnz, dtype=np.float64)
    c = lp[:n].copy()
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    x = np.zeros(n, dtype=np.float64)
    for k in range(n):
        top = _ereach(cp, ci, k, parent, s, w, n)
        x[k] = 0.0
        for p in range(cp[k], cp[k + 1]):
            if ci[p] <= k:
                x[ci[p]] += cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / lx[lp[i]]
            x[i] = 0.0
            for p in range(lp[i] + 1, c[i]):
                x[li[p]] -= lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            li[p] = k
            lx[p] = lki
        if not d > tol:
            return li, lx, k
        p = c[k]
        c[k] += 1
        li[p] = k
        lx[p] = np.sqrt(d)
    return li, lx, -1


@njit(cache=True, nogil=True)
def lsolve(n, lp, li, lx, b):
    for col in range(b.shape[1]):
        for j in range(n):
            b[j, col] /= lx[lp[j]]
            bj = b[j, col]
            for p in range(lp[j] + 1, lp[j + 1]):
                b[li[p], col] -= lx[p] * bj


@njit(cache=True, nogil=True)
def ltsolve(n, lp, li, lx, b):
    for col in range(b.shape[1]):
        for j in range(n - 1, -1, -1):
            acc = b[j, col]
            for p in range(lp[j] + 1, lp[j + 1]):
                acc -= lx[p] * b[li[p], col]
            b[j, col] = acc / lx[lp[j]]


@njit(cache=True, nogil=True)
def permute_to_upper(n, ap, ai, pinv):
    """Pattern of ``C = P A P^T`` (upper triangle) from the lower CSC of ``A``.

    Returns ``(cp, ci, dest)`` where ``dest[t]`` is the slot in C's value
    array receiving A's t-th stored value.
    """
    nnz = ap[n]
    counts = np.zeros(n + 1, dtype=np.int64)
    for col in range(n):
        for t in range(ap[col], ap[col + 1]):
            i = pinv[ai[t]]
            j = pinv[col]
            counts[max(i, j) + 1] += 1
    cp = np.cumsum(counts)
    nxt = cp[:n].copy()
    ci = np.empty(nnz, dtype=np.int64)
    dest = np.empty(nnz, dtype=np.int64)
    for col in range(n):
        for t in range(ap[col], ap[col + 1]):
            i = pinv[ai[t]]
            j = pinv[col]
            hi = max(i, j)
            q = nxt[hi]
            nxt[hi] += 1
            ci[q] = min(i, j)
            dest[t] = q
    return cp, ci, dest


@njit(cache=True, nogil=True)
def _set_bit(bits, w):
    bits[w >> 6] |= np.uint64(1) << np.uint64(w & 63)


@njit(cache=True, nogil=True)
def _highest_bit(bits):
    for j in range(bits.size - 1, -1, -1):
        x = bits[j]
        if x != 0:
            b = 63
            while (x >> np.uint64(b)) & np.uint64(1) == 0:
                b -= 1
            return j * 64 + b
    return -1


@njit(cache=True, nogil=True)
def colour_search(n, max_colours, ap, ai):
    """Forward-checking colouring in ascending node order with conflict-directed backjumping.

    ``ap, ai`` is the symmetric adjacency in CSR form. Returns the colour
    of every node, or an array of -1 when no colouring exists.
    """
    words = (n + 63) // 64
    conflict = np.zeros((n, words), dtype=np.uint64)
    culprits = np.zeros(words, dtype=np.uint64)
    forbid = np.zeros((n, max_colours), dtype=np.int64)
    colour = np.full(n, -1, dtype=np.int64)
    next_try = np.zeros(n, dtype=np.int64)
    v = 0
    while v < n:
        placed = False
        for c in range(next_try[v], max_colours):
            if forbid[v, c] != 0:
                continue
            ok = True
            for p in range(ap[v], ap[v + 1]):
                u = ai[p]
                if u <= v or forbid[u, c] != 0:
                    continue
                left = 0
                for cc in range(max_colours):
                    if forbid[u, cc] == 0:
                        left += 1
                if left == 1:
                    for q in range(ap[u], ap[u + 1]):
                        w = ai[q]
                        if w < v:
                            _set_bit(conflict[v], w)
                    ok = False
                    break
            if ok:
                colour[v] = c
                for p in range(ap[v], ap[v + 1]):
                    if ai[p] > v:
                        forbid[ai[p], c] += 1
                next_try[v] = c + 1
                placed = True
                break
        if placed:
            v += 1
            continue
        culprits[:] = conflict[v]
        for p in range(ap[v], ap[v + 1]):
            if ai[p] < v:
                _set_bit(culprits, ai[p])
        h = _highest_bit(culprits)
        if h < 0:
            colour[:] = -1
            return colour
        culprits[h >> 6] &= ~(np.uint64(1) << np.uint64(h & 63))
        conflict[h] |= culprits
        for u in range(v, h - 1, -1):
            if colour[u] >= 0:
                for p in range(ap[u], ap[u + 1]):
                    if ai[p] > u:
                        forbid[ai[p], colour[u]] -= 1
                colour[u] = -1
            if u > h:
                next_try[u] = 0
                conflict[u, :] = 0
        v = h
    return colour
