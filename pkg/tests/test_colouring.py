import csv
import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from msgmrf.colouring import (DependencyGraph, Tiling, backtracking_colour,
                              build_param_dependency_graph, build_tilings, colour_with_fallback,
                              tile_adjacency, tile_supergraph_colour)
from msgmrf.errors import ColouringInfeasible, InvalidTileExtent
from msgmrf.mesh import build_grid_mesh, data_footprint, eval_basis_matrix
from msgmrf.sampler import SpdePrior, minimal_footprint

UNIT = ((0, 1), (0, 1))


def cycle(n):
    return DependencyGraph(n, frozenset((i, (i + 1) % n) for i in range(n)))


def brute_force_colourable(g, k):
    return any(all(c[i] != c[j] for i, j in g.edges)
               for c in itertools.product(range(k), repeat=g.node_count))


def param_graph(process_mesh, param_mesh, points=None, rings=0):
    graph = SpdePrior(process_mesh).graph()
    b = eval_basis_matrix(param_mesh, process_mesh.vertices).tocsc()
    fps = [minimal_footprint(b[:, i].toarray().ravel(), graph, rings) for i in range(b.shape[1])]
    if points is None:
        dfp, m = [np.zeros(0, dtype=np.int64)] * len(fps), 0
    else:
        a = eval_basis_matrix(process_mesh, points)
        dfp, m = [data_footprint(a, f) for f in fps], len(points)
    return build_param_dependency_graph(graph, fps, dfp, param_influence=b, n_data=m), fps, graph


def test_dependency_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        DependencyGraph(3, frozenset({(1, 1)}))
    with pytest.raises(ValueError):
        DependencyGraph(3, frozenset({(0, 3)}))


def test_path_two_colours():
    g = DependencyGraph(3, frozenset({(0, 1), (1, 2)}))
    c = backtracking_colour(g, 2)
    np.testing.assert_array_equal(c.colour_of, [0, 1, 0])
    assert c.num_colours == 2


def test_five_cycle():
    g = cycle(5)
    assert not brute_force_colourable(g, 2)
    with pytest.raises(ColouringInfeasible):
        backtracking_colour(g, 2)
    c = backtracking_colour(g, 3)
    assert c.num_colours == 3 and c.is_proper(g)


def test_fallback_raises_budget():
    k5 = DependencyGraph(5, frozenset(itertools.combinations(range(5), 2)))
    c = colour_with_fallback(k5, 4)
    assert c.num_colours == 5 and c.is_proper(k5)


def test_colouring_csv_is_one_based(tmp_path):
    c = backtracking_colour(cycle(4), 2)
    c.to_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["node_id", "colour"]
    assert rows[1] == ["1", "1"] and rows[2] == ["2", "2"]


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 9), p=st.floats(0.0, 1.0), k=st.integers(1, 4), seed=st.integers(0, 999))
def test_property_matches_brute_force(n, p, k, seed):
    rng = np.random.default_rng(seed)
    g = DependencyGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)
                                     if rng.uniform() < p))
    try:
        c = backtracking_colour(g, k)
    except ColouringInfeasible:
        assert not brute_force_colourable(g, k)
        return
    assert c.is_proper(g) and c.num_colours <= k
    # colours are contiguous and every colour is used
    assert set(c.colour_of.tolist()) == set(range(c.num_colours))
    np.testing.assert_array_equal(c.colour_of, backtracking_colour(g, k).colour_of)


def test_param_graph_1d_chain_is_path():
    g, fps, _ = param_graph(build_grid_mesh(1, (0, 1), 0.02), build_grid_mesh(1, (0, 1), 0.5))
    assert all(len(f) for f in fps)
    assert g.edges == frozenset({(0, 1), (1, 2)})


def test_param_graph_2d_isomorphic_to_mesh():
    pm = build_grid_mesh(2, UNIT, 1 / 3)
    g, _, _ = param_graph(build_grid_mesh(2, UNIT, 1 / 24), pm)
    mesh_edges = frozenset(map(tuple, pm.edges().tolist()))
    assert g.edges == mesh_edges


def test_param_graph_separated_footprints_have_no_edges():
    adj = build_grid_mesh(1, (0, 1), 0.1).adjacency()
    fps = [np.array([0, 1]), np.array([4, 5]), np.array([8, 9, 10])]
    dfp = [np.array([0]), np.array([1]), np.array([2])]
    assert build_param_dependency_graph(adj, fps, dfp, n_data=3).edges == frozenset()
    # shared data creates an edge
    dfp2 = [np.array([0]), np.array([0]), np.array([2])]
    assert build_param_dependency_graph(adj, fps, dfp2, n_data=3).edges == frozenset({(0, 1)})


def test_param_colouring_separates_read_write_sets():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (200, 2))
    g, fps, graph = param_graph(build_grid_mesh(2, UNIT, 1 / 24), build_grid_mesh(2, UNIT, 0.25),
                                pts, rings=1)
    col = colour_with_fallback(g, 4)
    assert col.is_proper(g)
    graph = sp.csr_matrix(graph)
    for cls in col.classes():
        for a, b in itertools.combinations(cls, 2):
            blanket = np.unique(graph[fps[a]].indices)
            assert np.intersect1d(np.union1d(fps[a], blanket), fps[b]).size == 0


def test_tilings_1d_reference_split():
    mesh = build_grid_mesh(1, (0, 98), 1.0)
    t1, t2, t3 = build_tilings(mesh, 49.0, 0, 0)
    assert [list(t) for t in t1.tiles] == [list(range(49)), list(range(49, 99))]
    assert t2.tiles[0][-1] + 1 == 49 - 49 // 3
    assert (t1.shift_id, t2.shift_id, t3.shift_id) == (1, 2, 3)


def test_tilings_invalid_extent():
    with pytest.raises(InvalidTileExtent):
        build_tilings(build_grid_mesh(1, (0, 1), 0.1), 0.1, 0, 0)


def interior_everywhere(mesh, extent):
    adj = sp.csr_matrix(mesh.adjacency())
    covered = np.zeros(mesh.n_vertices, dtype=bool)
    for tiling in build_tilings(mesh, extent, 0, 0):
        t = tiling.tile_of
        # interior: no vertex of a different tile within one hop
        near = np.zeros(mesh.n_vertices, dtype=bool)
        coo = adj.tocoo()
        cross = t[coo.row] != t[coo.col]
        near[coo.row[cross]] = True
        covered |= ~near
    return covered


@pytest.mark.parametrize("dim,spacing,extent", [(1, 0.01, 0.1), (1, 0.02, 0.3),
                                                (2, 1 / 40, 9 / 40), (2, 1 / 30, 0.4)])
def test_every_coefficient_interior_in_some_tiling(dim, spacing, extent):
    mesh = build_grid_mesh(dim, (0, 1) if dim == 1 else UNIT, spacing)
    assert interior_everywhere(mesh, extent).all()


def test_merge_small_tiles():
    mesh = build_grid_mesh(1, (0, 1), 0.01)
    counts = np.zeros(mesh.n_vertices)
    counts[:60] = 1
    for tiling in build_tilings(mesh, 0.2, min_data=5, min_basis=10, data_counts=counts):
        sizes = [len(t) for t in tiling.tiles]
        data = [counts[t].sum() for t in tiling.tiles]
        assert min(sizes) >= 10 and min(data) >= 5
        np.testing.assert_array_equal(np.sort(np.concatenate(tiling.tiles)), np.arange(mesh.n_vertices))


@settings(max_examples=40, deadline=None)
@given(dim=st.sampled_from([1, 2]), cells=st.integers(6, 30), factor=st.floats(2.0, 8.0),
       min_basis=st.integers(0, 40), seed=st.integers(0, 999))
def test_property_tilings_partition_and_colour(dim, cells, factor, min_basis, seed):
    spacing = 1.0 / cells
    mesh = build_grid_mesh(dim, (0, 1) if dim == 1 else UNIT, spacing)
    counts = np.random.default_rng(seed).poisson(1.0, mesh.n_vertices)
    graph = SpdePrior(mesh).graph()
    for tiling in build_tilings(mesh, factor * spacing, 3, min_basis, counts, adjacency=graph):
        allidx = np.concatenate(tiling.tiles)
        assert allidx.size == mesh.n_vertices
        np.testing.assert_array_equal(np.sort(allidx), np.arange(mesh.n_vertices))
        col = tile_supergraph_colour(tiling, graph, 4)
        assert col.is_proper(tile_adjacency(tiling, graph))
        assert col.num_colours <= 4
        # same-colour tiles share no precision entry
        coo = sp.coo_matrix(graph)
        ct = col.colour_of[tiling.tile_of]
        cross = tiling.tile_of[coo.row] != tiling.tile_of[coo.col]
        assert not np.any(cross & (ct[coo.row] == ct[coo.col]))


def test_supergraph_examples():
    mesh = build_grid_mesh(1, (0, 1), 0.1)
    tiling = Tiling.from_tiles([range(0, 5), range(5, 11)], 11)
    col = tile_supergraph_colour(tiling, mesh.adjacency())
    assert col.num_colours == 2
    mesh2 = build_grid_mesh(2, UNIT, 0.05)
    graph = SpdePrior(mesh2).graph()
    t = build_tilings(mesh2, 0.25, 0, 0, adjacency=graph)[0]
    assert tile_supergraph_colour(t, graph).num_colours <= 4
    g = DependencyGraph.from_adjacency(mesh.adjacency())
    assert tile_supergraph_colour(tiling, g).num_colours == 2


def test_tiling_from_tiles_validates():
    with pytest.raises(ValueError):
        Tiling.from_tiles([[0, 1], [1, 2]], 3)
    with pytest.raises(ValueError):
        Tiling.from_tiles([[0, 1]], 3)
