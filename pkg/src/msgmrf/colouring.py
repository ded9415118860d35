"""Dependency graphs, backtracking colouring and shifted tilings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ._kernels import colour_search
from .errors import ColouringInfeasible, InvalidTileExtent
from .mesh import Mesh


@dataclass(frozen=True)
class DependencyGraph:
    node_count: int
    edges: frozenset

    def __post_init__(self):
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i}, {j}) references an invalid node")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    @classmethod
    def from_adjacency(cls, adjacency) -> "DependencyGraph":
        a = sp.coo_matrix(adjacency)
        keep = a.row < a.col
        pairs = zip(a.row[keep].tolist(), a.col[keep].tolist())
        low = a.row > a.col
        pairs2 = zip(a.col[low].tolist(), a.row[low].tolist())
        return cls(a.shape[0], frozenset(list(pairs) + list(pairs2)))

    def neighbours(self) -> list[list[int]]:
        nb = [[] for _ in range(self.node_count)]
        for i, j in sorted(self.edges):
            nb[i].append(j)
            nb[j].append(i)
        return nb


@dataclass(frozen=True)
class Colouring:
    """``colour_of[i]`` is in ``0 .. num_colours - 1`` (exported 1-based)."""

    colour_of: np.ndarray
    num_colours: int

    def classes(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.colour_of == c) for c in range(self.num_colours)]

    def is_proper(self, graph: DependencyGraph) -> bool:
        return all(self.colour_of[i] != self.colour_of[j] for i, j in graph.edges)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "colour"])
            for i, c in enumerate(self.colour_of):
                w.writerow([i + 1, int(c) + 1])


def backtracking_colour(g: DependencyGraph, max_colours: int) -> Colouring:
    """Proper colouring by depth-first assignment in ascending node order.

    Each node takes the lowest colour compatible with its coloured
    neighbours and leaving every uncoloured neighbour at least one option
    (forward checking). On a dead end the search jumps back to the latest
    node implicated in the conflict, which returns the same colouring as
    chronological backtracking with far fewer steps.

    Raises
    ------
    ColouringInfeasible
        If no colouring with ``max_colours`` colours exists.
    """
    n = g.node_count
    if max_colours < 1:
        raise ColouringInfeasible("max_colours must be positive")
    if n == 0:
        return Colouring(np.zeros(0, dtype=np.int64), 0)
    nb = g.neighbours()
    ap = np.zeros(n + 1, dtype=np.int64)
    ap[1:] = np.cumsum([len(x) for x in nb])
    ai = np.array([u for x in nb for u in sorted(x)], dtype=np.int64)
    colour = colour_search(n, max_colours, ap, ai)
    if colour[0] < 0:
        raise ColouringInfeasible(f"graph needs more than {max_colours} colours")
    # relabel so colours are contiguous in order of first use
    remap = {}
    for c in colour.tolist():
        if c not in remap:
            remap[c] = len(remap)
    out = np.array([remap[c] for c in colour.tolist()], dtype=np.int64)
    return Colouring(out, len(remap))


def colour_with_fallback(g: DependencyGraph, start: int = 4) -> Colouring:
    """Backtracking colouring, raising the colour budget until it succeeds."""
    k = max(1, start)
    while True:
        try:
            return backtracking_colour(g, k)
        except ColouringInfeasible:
            k += 1


def _indicator(sets, n_cols) -> sp.csr_matrix:
    rows = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(sets)]) \
        if sets else np.zeros(0, dtype=np.int64)
    cols = np.concatenate([np.asarray(s, dtype=np.int64) for s in sets]) if sets else rows
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(sets), n_cols))


def build_param_dependency_graph(process_graph, footprints, data_footprints,
                                 param_influence=None, n_data: int | None = None) -> DependencyGraph:
    """Conflict graph over parameter coefficients of one scale.

    Parameters
    ----------
    process_graph : sparse matrix
        Symmetric adjacency of the process GMRF (nonzero pattern of ``Q_k``).
    footprints : sequence of index arrays
        Effective process footprint ``T`` of each parameter coefficient.
    data_footprints : sequence of index arrays
        Data footprint ``F`` of each coefficient.
    param_influence : sparse matrix, optional
        ``(r_eta, r_theta)`` parameter basis evaluated at process vertices.
        Columns mark where each coefficient changes ``tau`` and ``kappa``.

    Two coefficients are joined when one block reads what the other writes:
    footprints overlapping or adjacent in the process graph, shared data,
    or one coefficient's influence region touching the other's footprint or
    Markov blanket (or overlapping its influence region).
    """
    adj = sp.csr_matrix(process_graph)
    r = adj.shape[0]
    p = len(footprints)
    w = _indicator(footprints, r)
    reach = ((w @ (adj + sp.eye(r, format="csr"))) > 0).astype(float)
    conflict = reach @ w.T
    if data_footprints is not None:
        m = n_data if n_data is not None else (
            1 + max((int(np.max(f)) for f in data_footprints if len(f)), default=0))
        d = _indicator(data_footprints, m)
        conflict = conflict + d @ d.T
    if param_influence is not None:
        infl = (sp.csc_matrix(param_influence) > 0).astype(float).T.tocsr()
        conflict = conflict + reach @ infl.T + infl @ infl.T
    conflict = sp.coo_matrix(conflict + conflict.T)
    keep = (conflict.row < conflict.col) & (conflict.data != 0)
    edges = frozenset(zip(conflict.row[keep].tolist(), conflict.col[keep].tolist()))
    return DependencyGraph(p, edges)


@dataclass(frozen=True)
class Tiling:
    tile_of: np.ndarray
    tiles: tuple
    shift_id: int

    @property
    def n_tiles(self) -> int:
        return len(self.tiles)

    @classmethod
    def from_tiles(cls, tiles, n: int, shift_id: int = 1) -> "Tiling":
        tile_of = np.full(n, -1, dtype=np.int64)
        clean = []
        for t, members in enumerate(tiles):
            members = np.asarray(sorted(members), dtype=np.int64)
            if members.size == 0:
                raise ValueError("tiles must be nonempty")
            if np.any(tile_of[members] >= 0):
                raise ValueError("tiles overlap")
            tile_of[members] = t
            clean.append(members)
        if np.any(tile_of < 0):
            raise ValueError("tiles do not cover every index")
        return cls(tile_of, tuple(clean), shift_id)


def _axis_spacing(mesh: Mesh) -> np.ndarray:
    if mesh.grid is not None:
        return np.asarray(mesh.grid[1], dtype=float)
    e = mesh.edges()
    d = np.abs(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]])
    return np.array([np.median(d[d[:, k] > 0, k]) for k in range(mesh.dimension)])


def _merge_small(tile_of, adjacency, data_counts, min_data, min_basis):
    tile_of = tile_of.copy()
    a = sp.coo_matrix(adjacency)
    while True:
        ids = np.unique(tile_of)
        if ids.size <= 1:
            break
        sizes = np.bincount(tile_of, minlength=ids.max() + 1)
        data = np.bincount(tile_of, weights=data_counts, minlength=ids.max() + 1)
        small = [t for t in ids if sizes[t] < min_basis or data[t] < min_data]
        if not small:
            break
        t = small[0]
        src = tile_of[a.row] == t
        dst = tile_of[a.col[src]]
        dst = dst[dst != t]
        if dst.size == 0:
            break
        counts = np.bincount(dst)
        best = int(np.flatnonzero(counts == counts.max())[0])
        tile_of[tile_of == t] = best
    # compact relabel preserving order of first appearance by tile id
    _, compact = np.unique(tile_of, return_inverse=True)
    return compact.astype(np.int64)


def build_tilings(mesh: Mesh, tile_extent: float, min_data: int = 100, min_basis: int = 200,
                  data_counts=None, adjacency=None):
    """Three axis-aligned tilings, shifted successively by a third of a tile.

    Coefficients belong to the tile containing their vertex (the maximum of
    their tent function). Tiling 2 is shifted by ``tile_extent / 3`` and
    tiling 3 by ``2 tile_extent / 3``; in 2D the shift is applied to both
    axes so boundaries of all three tilings interleave in x and in y.
    Tiles holding fewer than ``min_data`` data points or ``min_basis``
    coefficients are merged into the neighbouring tile sharing the most
    boundary edges (lowest tile id on ties).
    """
    h = _axis_spacing(mesh)
    if not tile_extent > 0 or np.any(tile_extent < 2.0 * h * (1 - 1e-9)):
        raise InvalidTileExtent("tile extent must span at least 3 mesh vertices per axis")
    n = mesh.n_vertices
    counts = np.zeros(n) if data_counts is None else np.asarray(data_counts, dtype=float)
    adj = mesh.adjacency() if adjacency is None else adjacency
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    out = []
    for shift_id, frac in ((1, 0.0), (2, 1.0 / 3.0), (3, 2.0 / 3.0)):
        s = frac * tile_extent
        span = hi - lo + s
        ncell = np.maximum(np.ceil(span / tile_extent - 1e-9).astype(np.int64), 1)
        idx = np.floor((v - lo + s) / tile_extent + 1e-9).astype(np.int64)
        idx = np.minimum(idx, ncell - 1)
        if mesh.dimension == 1:
            flat = idx[:, 0]
        else:
            flat = idx[:, 1] * ncell[0] + idx[:, 0]
        _, raw = np.unique(flat, return_inverse=True)
        merged = _merge_small(raw.astype(np.int64), adj, counts, min_data, min_basis)
        tiles = [np.flatnonzero(merged == t) for t in range(merged.max() + 1)]
        out.append(Tiling(merged, tuple(tiles), shift_id))
    return tuple(out)


def tile_adjacency(tiling: Tiling, process_graph) -> DependencyGraph:
    """Supergraph joining tiles that share any edge of the process graph."""
    adj = sp.csr_matrix(process_graph)
    n = adj.shape[0]
    m = sp.csr_matrix((np.ones(n), (np.arange(n), tiling.tile_of)), shape=(n, tiling.n_tiles))
    s = sp.coo_matrix(m.T @ adj @ m)
    keep = (s.row < s.col) & (s.data != 0)
    return DependencyGraph(tiling.n_tiles, frozenset(zip(s.row[keep].tolist(), s.col[keep].tolist())))


def tile_supergraph_colour(tiling: Tiling, process_graph, max_colours: int = 4) -> Colouring:
    """Colour tiles so that same-colour tiles share no process-graph edge."""
    if isinstance(process_graph, DependencyGraph):
        e = np.array(sorted(process_graph.edges), dtype=np.int64).reshape(-1, 2)
        n = process_graph.node_count
        process_graph = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        process_graph = process_graph + process_graph.T
    return backtracking_colour(tile_adjacency(tiling, process_graph), max_colours)
