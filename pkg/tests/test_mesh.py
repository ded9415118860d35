import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from msgmrf.errors import InvalidExtent, InvalidPhi, NonPositiveParameter, PointOutsideMesh
from msgmrf.mesh import (assemble_ar1_precision, assemble_fem_operators, assemble_spde_precision,
                         build_grid_mesh, data_footprint, eval_basis_matrix, read_mesh, write_mesh)
from msgmrf.params import natural_fields, smoothness_for
from msgmrf.sparse import cholesky_factorize

UNIT = ((0, 1), (0, 1))


def test_grid_counts():
    m = build_grid_mesh(1, (0, 1), 0.5)
    np.testing.assert_allclose(m.vertices[:, 0], [0, 0.5, 1])
    assert len(m.simplices) == 2
    m = build_grid_mesh(2, UNIT, 0.5)
    assert m.n_vertices == 9 and len(m.simplices) == 8
    assert build_grid_mesh(1, (0, 1), 0.001).n_vertices == 1001


def test_grid_invalid_extent():
    with pytest.raises(InvalidExtent):
        build_grid_mesh(1, (0, 1), 1.5)
    with pytest.raises(InvalidExtent):
        build_grid_mesh(2, UNIT, -0.1)


def test_basis_examples():
    m = build_grid_mesh(1, (0, 1), 0.5)
    np.testing.assert_allclose(eval_basis_matrix(m, [0.25]).toarray(), [[0.5, 0.5, 0]])
    np.testing.assert_allclose(eval_basis_matrix(m, [0.5]).toarray(), [[0, 1, 0]])
    m2 = build_grid_mesh(2, UNIT, 0.5)
    tri = m2.simplices[3]
    row = eval_basis_matrix(m2, m2.vertices[tri].mean(axis=0, keepdims=True)).toarray()[0]
    np.testing.assert_allclose(row[tri], [1 / 3] * 3)
    assert row.sum() == pytest.approx(1.0)


def test_basis_outside_mesh_reports_index():
    m = build_grid_mesh(2, UNIT, 0.5)
    with pytest.raises(PointOutsideMesh) as e:
        eval_basis_matrix(m, [[0.5, 0.5], [1.5, 0.2]])
    assert "1" in str(e.value)


def test_fem_1d_examples():
    ops = assemble_fem_operators(build_grid_mesh(1, (0, 1), 0.5))
    np.testing.assert_allclose(ops.lumped_mass, [0.25, 0.5, 0.25])
    h = 0.1
    ops = assemble_fem_operators(build_grid_mesh(1, (0, 1), h))
    assert ops.lumped_mass[5] == pytest.approx(h)
    np.testing.assert_allclose(ops.stiffness.toarray()[5, 4:7], [-1 / h, 2 / h, -1 / h])


@pytest.mark.parametrize("dim", [1, 2])
def test_stiffness_null_space_and_psd(dim):
    m = build_grid_mesh(dim, (0, 1) if dim == 1 else UNIT, 0.2)
    ops = assemble_fem_operators(m)
    g = ops.stiffness.toarray()
    np.testing.assert_allclose(g @ np.ones(len(g)), 0, atol=1e-12)
    assert np.linalg.eigvalsh(g).min() > -1e-10
    assert np.all(ops.lumped_mass > 0)


def test_spde_constant_parameters_dense_oracle():
    m = build_grid_mesh(1, (0, 1), 0.1)
    ops = assemble_fem_operators(m)
    n = m.n_vertices
    q = assemble_spde_precision(ops, np.ones(n), np.ones(n)).toarray()
    c = np.diag(ops.lumped_mass)
    g = ops.stiffness.toarray()
    np.testing.assert_allclose(q, c + 2 * g + g @ np.linalg.inv(c) @ g, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(q, q.T)
    q2 = assemble_spde_precision(ops, np.ones(n), 2 * np.ones(n)).toarray()
    np.testing.assert_allclose(q2, 4 * q, rtol=1e-12)


def test_spde_nonconstant_dense_oracle():
    m = build_grid_mesh(2, UNIT, 0.25)
    ops = assemble_fem_operators(m)
    rng = np.random.default_rng(0)
    kap = rng.uniform(1, 3, m.n_vertices)
    tau = rng.uniform(0.5, 2, m.n_vertices)
    q = assemble_spde_precision(ops, kap, tau).toarray()
    c = np.diag(ops.lumped_mass)
    g = ops.stiffness.toarray()
    k2, t = np.diag(kap ** 2), np.diag(tau)
    ref = t @ (k2 @ c @ k2 + k2 @ g + g @ k2 + g @ np.linalg.inv(c) @ g) @ t
    np.testing.assert_allclose(q, ref, rtol=1e-10, atol=1e-10)


def test_spde_rejects_nonpositive():
    ops = assemble_fem_operators(build_grid_mesh(1, (0, 1), 0.5))
    with pytest.raises(NonPositiveParameter):
        assemble_spde_precision(ops, np.array([1.0, 0.0, 1.0]), np.ones(3))


@pytest.mark.parametrize("dim,spacing,rho", [(1, 0.005, 0.1), (2, 1 / 60, 0.15)])
def test_stationary_marginal_variance(dim, spacing, rho):
    extent = (0, 1) if dim == 1 else UNIT
    m = build_grid_mesh(dim, extent, spacing)
    ops = assemble_fem_operators(m)
    n = m.n_vertices
    tau, kappa = natural_fields(np.zeros(n), np.full(n, math.log(rho)), smoothness_for(dim), dim)
    q = assemble_spde_precision(ops, kappa, tau)
    f = cholesky_factorize(q)
    centre = np.argmin(np.sum((m.vertices - 0.5) ** 2, axis=1))
    e = np.zeros(n)
    e[centre] = 1.0
    from msgmrf.sparse import solve
    assert solve(f, e)[centre] == pytest.approx(1.0, rel=0.05)


def test_ar1_examples():
    q = assemble_ar1_precision(3, 0.9, 0.2).toarray()
    np.testing.assert_allclose(np.diag(q), [5, 9.05, 5])
    np.testing.assert_allclose(np.diag(q, 1), [-4.5, -4.5])
    np.testing.assert_allclose(assemble_ar1_precision(4, 0.0, 0.5).toarray(), 2 * np.eye(4))
    with pytest.raises(InvalidPhi):
        assemble_ar1_precision(3, 1.0, 0.2)


def test_ar1_correlation_structure():
    phi = 0.7
    cov = np.linalg.inv(assemble_ar1_precision(5, phi, 0.3).toarray())
    # stationary AR(1) by recursion: x_1 ~ N(0, s2/(1-phi^2)), x_t = phi x_{t-1} + v_t
    var = 0.3 / (1 - phi ** 2)
    ref = var * phi ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    np.testing.assert_allclose(cov, ref, rtol=1e-8)


def test_ar1_lag1_sample_correlation():
    from msgmrf.sparse import backsolve_transpose
    f = cholesky_factorize(assemble_ar1_precision(99, 0.9, 0.2))
    x = backsolve_transpose(f, np.random.default_rng(0).standard_normal((99, 100_000)))
    r = np.corrcoef(x[49], x[50])[0, 1]
    assert r == pytest.approx(0.9, abs=0.005)


def test_data_footprint_examples():
    m = build_grid_mesh(1, (0, 1), 0.5)
    a = eval_basis_matrix(m, [0.25])
    np.testing.assert_array_equal(data_footprint(a, [0]), [0])
    assert data_footprint(a, [2]).size == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_property_partition_of_unity_and_footprint_union(seed):
    rng = np.random.default_rng(seed)
    m = build_grid_mesh(2, UNIT, float(rng.choice([0.1, 0.2, 0.25])))
    pts = rng.uniform(0, 1, (50, 2))
    a = eval_basis_matrix(m, pts)
    np.testing.assert_allclose(np.asarray(a.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert np.diff(a.indptr).max() <= 3
    i1 = rng.choice(m.n_vertices, 5, replace=False)
    i2 = rng.choice(m.n_vertices, 5, replace=False)
    union = data_footprint(a, np.concatenate([i1, i2]))
    np.testing.assert_array_equal(union, np.union1d(data_footprint(a, i1), data_footprint(a, i2)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_property_spde_factorizable(seed):
    rng = np.random.default_rng(seed)
    m = build_grid_mesh(2, UNIT, 0.2)
    ops = assemble_fem_operators(m)
    q = assemble_spde_precision(ops, np.exp(rng.normal(0, 1, m.n_vertices)),
                                np.exp(rng.normal(0, 1, m.n_vertices)))
    np.testing.assert_array_equal(q.toarray(), q.toarray().T)
    cholesky_factorize(q)


def test_mesh_round_trip(tmp_path):
    m = build_grid_mesh(2, UNIT, 0.25)
    write_mesh(m, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text().splitlines()
    assert text[0] == "vertices" and text[1].startswith("1 ")
    back = read_mesh(tmp_path / "m.txt")
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.simplices, m.simplices)


def test_triangles_positively_oriented():
    m = build_grid_mesh(2, UNIT, 0.25)
    v = m.vertices[m.simplices]
    area = 0.5 * ((v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
                  - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))
    assert np.all(area > 0)
    assert sp.issparse(m.adjacency())
