"""Fill-reducing orderings computed from a symmetric sparsity pattern."""

from __future__ import annotations

import heapq

import numpy as np


def minimum_degree(n: int, indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Approximate minimum degree ordering on a quotient graph.

    Parameters
    ----------
    n : int
        Matrix dimension.
    indptr, indices : ndarray
        Compressed pattern of the matrix. Either triangle (or both) may be
        given; the pattern is symmetrised internally and the diagonal ignored.

    Returns
    -------
    perm : ndarray of int64
        ``perm[new] = old``; eliminating variables in this order tends to
        keep the Cholesky factor sparse.

    Notes
    -----
    Eliminated pivots become *elements* (cliques over their remaining
    neighbours) that are absorbed when a neighbouring pivot is chosen, so the
    working graph never stores the fill explicitly. Degrees use the usual
    approximate external-degree bound. Ties go to the lowest index, which
    makes the ordering a pure function of the pattern.
    """
    adj: list[set[int]] = [set() for _ in range(n)]
    for col in range(n):
        for row in indices[indptr[col]:indptr[col + 1]]:
            row = int(row)
            if row != col:
                adj[row].add(col)
                adj[col].add(row)

    elems: list[set[int]] = [set() for _ in range(n)]
    elem_vars: dict[int, set[int]] = {}
    degree = [len(a) for a in adj]
    heap = [(degree[i], i) for i in range(n)]
    heapq.heapify(heap)
    done = bytearray(n)
    order = []
    remaining = n

    while heap:
        d, p = heapq.heappop(heap)
        if done[p] or d != degree[p]:
            continue
        reach = set(adj[p])
        absorbed = elems[p]
        for e in absorbed:
            reach |= elem_vars.pop(e)
        reach.discard(p)
        done[p] = 1
        order.append(p)
        remaining -= 1

        for i in reach:
            a = adj[i]
            a.discard(p)
            a -= reach
            ei = elems[i]
            ei -= absorbed
            ei.add(p)
        elem_vars[p] = reach

        cap = remaining - 1
        for i in reach:
            deg = len(adj[i]) + len(reach) - 1
            for e in elems[i]:
                if e != p:
                    deg += len(elem_vars[e] - reach)
            if deg > cap:
                deg = cap
            degree[i] = deg
            heapq.heappush(heap, (deg, i))

    return np.asarray(order, dtype=np.int64)


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=perm.dtype)
    return inv
