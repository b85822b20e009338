from __future__ import annotations

import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from stbinom.spatial import (
    CarLogDet,
    KnotSet,
    KrigingOperator,
    SingularMatrixError,
    adjacency_matrix,
    car_degrees,
    car_logdet,
    car_precision,
    cholesky_jittered,
    corr_matrix,
    greedy_coloring,
    kmeans_knots,
    kriging_operator,
    lattice_adjacency,
    lattice_coords,
    morans_i,
    powered_exp_corr,
)


def moran_double_loop(x, W):
    """Moran's I written out as explicit sums."""
    W = np.asarray(W)
    S = len(x)
    xbar = sum(x) / S
    num = 0.0
    wsum = 0.0
    for i in range(S):
        for j in range(S):
            num += W[i, j] * (x[i] - xbar) * (x[j] - xbar)
            wsum += W[i, j]
    den = sum((xi - xbar) ** 2 for xi in x)
    return S / wsum * num / den


def test_powered_exp_values():
    assert powered_exp_corr(0.6, 0.0) == 1.0
    assert powered_exp_corr(0.6, 1.0) == pytest.approx(0.6, rel=1e-15)
    assert powered_exp_corr(0.6, 2.0) == pytest.approx(0.1296, rel=1e-13)
    for bad in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError):
            powered_exp_corr(bad, 1.0)


def test_corr_matrix_examples():
    assert corr_matrix([(0.0, 0.0)], 0.6).tolist() == [[1.0]]
    np.testing.assert_allclose(corr_matrix([(0, 0), (1, 0)], 0.6), [[1, 0.6], [0.6, 1]], rtol=1e-14)
    R = corr_matrix([(0, 0), (1, 0), (2, 0)], 0.6)
    np.testing.assert_allclose([R[0, 1], R[0, 2], R[1, 2]], [0.6, 0.1296, 0.6], rtol=1e-13)
    assert np.all(np.linalg.eigvalsh(R) > 0)


@settings(max_examples=30)
@given(st.integers(2, 12), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_corr_matrix_properties(m, theta, seed):
    locs = np.random.default_rng(seed).uniform(0, 4, size=(m, 2))
    R = corr_matrix(locs, theta)
    np.testing.assert_array_equal(R, R.T)
    np.testing.assert_array_equal(np.diag(R), 1.0)
    assert np.all(R > 0) and np.all(R <= 1)


def test_jitter_then_error():
    near = np.array([[1.0, 1 - 1e-17], [1 - 1e-17, 1.0]])
    L = cholesky_jittered(near)
    assert np.all(np.isfinite(L))
    with pytest.raises(SingularMatrixError):
        cholesky_jittered(np.ones((3, 3)) * 5 - np.eye(3) * 10)


def test_kriging_identity_and_single_knot():
    locs = lattice_coords(3, 3)
    R = corr_matrix(locs, 0.6)
    np.testing.assert_allclose(kriging_operator(R, R), np.eye(9), atol=1e-10)
    c = corr_matrix(locs, 0.6, [(1.0, 1.0)])
    np.testing.assert_allclose(kriging_operator(np.eye(1), c), c, rtol=1e-15)


def test_kriging_matches_dense_solve():
    knots = np.array([[0.0, 0.0], [2.0, 1.0]])
    locs = np.array([[0.5, 0.0], [1.0, 1.0], [3.0, 0.5]])
    Rk = corr_matrix(knots, 0.7)
    C = corr_matrix(locs, 0.7, knots)
    T = kriging_operator(Rk, C)
    for s in range(3):
        # row s solves Rk w = C[s]
        np.testing.assert_allclose(T[s], np.linalg.solve(Rk, C[s]), rtol=1e-12)
    with pytest.raises(ValueError):
        kriging_operator(Rk, C[:, :1])


def test_kriging_operator_object():
    coords = lattice_coords(4, 4)
    knots = coords[[0, 5, 10, 15]]
    kr = KrigingOperator.build(coords, knots, 0.5)
    R = corr_matrix(knots, 0.5)
    v = np.array([0.3, -1.0, 2.0, 0.1])
    assert kr.logdet() == pytest.approx(np.linalg.slogdet(R)[1], rel=1e-12)
    assert kr.quad(v) == pytest.approx(v @ np.linalg.solve(R, v), rel=1e-12)
    np.testing.assert_allclose(kr.precision(), np.linalg.inv(R), atol=1e-10)


def test_knotset_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        KnotSet([(0, 0), (0, 0)])


def test_kmeans_knots_examples():
    locs = lattice_coords(3, 3)
    knots = kmeans_knots(locs, 9, seed=1).locations
    assert sorted(map(tuple, knots)) == sorted(map(tuple, locs))
    np.testing.assert_allclose(kmeans_knots(locs, 1).locations[0], locs.mean(axis=0), atol=1e-12)
    rng = np.random.default_rng(4)
    a = rng.normal(size=(30, 2)) * 0.1
    b = rng.normal(size=(40, 2)) * 0.1 + 50
    knots = kmeans_knots(np.vstack([a, b]), 2, seed=0).locations
    got = sorted(map(tuple, knots))
    np.testing.assert_allclose(got[0], a.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(got[1], b.mean(axis=0), atol=1e-10)
    with pytest.raises(ValueError):
        kmeans_knots(locs, 10)


def test_kmeans_reproducible():
    locs = np.random.default_rng(0).uniform(size=(200, 2))
    k1 = kmeans_knots(locs, 12, seed=5).locations
    k2 = kmeans_knots(locs, 12, seed=5).locations
    assert k1.tobytes() == k2.tobytes()


def test_car_precision_examples():
    W = adjacency_matrix([(0, 1), (1, 0)], 2)
    A = car_precision(W, car_degrees(W), 0.5, 1.0).toarray()
    np.testing.assert_allclose(A, [[1, -0.5], [-0.5, 1]])
    A2 = car_precision(W, car_degrees(W), 0.5, 0.005).toarray()
    np.testing.assert_allclose(A2, 200 * A, rtol=1e-12)
    # isolated vertex: raw degree gives a zero row, the guard gives a unit diagonal
    W3 = adjacency_matrix([(0, 1), (1, 0)], 3)
    raw = np.asarray(W3.sum(axis=1)).ravel()
    assert car_precision(W3, raw, 0.7, 1.0).toarray()[2, 2] == 0.0
    assert car_precision(W3, car_degrees(W3), 0.7, 1.0).toarray()[2, 2] == 1.0
    with pytest.raises(ValueError):
        car_precision(W, car_degrees(W), 1.0, 1.0)


@pytest.mark.parametrize("omega", [0.5, 0.9, 0.99])
def test_car_precision_symmetric_pd(omega):
    W = adjacency_matrix(lattice_adjacency(5, 6), 30)
    A = car_precision(W, car_degrees(W), omega, 0.3).toarray()
    np.testing.assert_allclose(A, A.T, atol=0)
    assert np.linalg.eigvalsh(A).min() > 0


@pytest.mark.parametrize("omega", [0.01, 0.5, 0.9, 0.999])
def test_car_logdet_agrees_with_dense(omega):
    W = adjacency_matrix(lattice_adjacency(4, 5, queen=False), 20)
    D = car_degrees(W)
    dense = np.linalg.slogdet(np.diag(D) - omega * W.toarray())[1]
    assert car_logdet(W, D, omega) == pytest.approx(dense, rel=1e-11)
    assert CarLogDet(W, D)(omega) == pytest.approx(dense, rel=1e-11)
    assert CarLogDet(W, D, dense_max=0)(omega) == pytest.approx(dense, rel=1e-11)


def test_two_region_logdet():
    W = adjacency_matrix([(0, 1), (1, 0)], 2)
    for omega in (0.2, 0.8):
        assert CarLogDet(W, car_degrees(W))(omega) == pytest.approx(np.log(1 - omega ** 2), rel=1e-12)


def _is_valid_coloring(classes, W):
    W = W.toarray()
    flat = np.concatenate(classes) if classes else np.array([])
    assert sorted(flat.tolist()) == list(range(W.shape[0]))
    for cls in classes:
        for i, j in itertools.combinations(cls, 2):
            assert W[i, j] == 0


def test_coloring_examples():
    assert [c.tolist() for c in greedy_coloring(sp.csr_matrix((4, 4)))] == [[0, 1, 2, 3]]
    path = adjacency_matrix([(0, 1), (1, 0), (1, 2), (2, 1)], 3)
    assert [c.tolist() for c in greedy_coloring(path)] == [[0, 2], [1]]
    W = adjacency_matrix(lattice_adjacency(3, 3, queen=True), 9)
    classes = greedy_coloring(W)
    assert len(classes) == 4
    _is_valid_coloring(classes, W)


@settings(max_examples=40)
@given(st.integers(2, 40), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_coloring_random_graphs(S, density, seed):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((S, S)) < density, k=1)
    pairs = np.argwhere(upper | upper.T)
    W = adjacency_matrix(pairs, S)
    _is_valid_coloring(greedy_coloring(W), W)


def test_morans_i_examples():
    W = adjacency_matrix(lattice_adjacency(2, 2, queen=False), 4)
    assert morans_i([1, -1, -1, 1], W) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(ValueError):
        morans_i([2.0, 2.0, 2.0, 2.0], W)
    with pytest.raises(ValueError):
        morans_i([1.0, 2.0], sp.csr_matrix((2, 2)))


def test_morans_i_double_loop_oracle():
    W = adjacency_matrix(lattice_adjacency(5, 5), 25)
    x = np.random.default_rng(11).normal(size=25)
    assert morans_i(x, W) == pytest.approx(moran_double_loop(list(x), W.toarray()), abs=1e-12)


def test_lattice_helpers():
    assert lattice_coords(2, 3).tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]
    rook = adjacency_matrix(lattice_adjacency(3, 3, queen=False), 9)
    queen = adjacency_matrix(lattice_adjacency(3, 3, queen=True), 9)
    assert rook.sum() == 24 and queen.sum() == 40
    assert (queen != queen.T).nnz == 0
    np.testing.assert_array_equal(car_degrees(queen), np.asarray(queen.sum(axis=1)).ravel())
