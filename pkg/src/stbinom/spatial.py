"""Correlation and kriging operators, CAR structure, knots, coloring, Moran's I."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

JITTER = 1e-8


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def powered_exp_corr(theta, dist):
    """Powered-exponential correlation ``theta ** (dist ** 2)``."""
    theta = np.asarray(theta, dtype=float)
    if np.any((theta <= 0) | (theta >= 1)):
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    dist = np.asarray(dist, dtype=float)
    if np.any(dist < 0):
        raise ValueError("distances must be non-negative")
    # exp(d^2 log theta) keeps the zero-distance entries at exactly 1
    return np.exp(np.square(dist) * np.log(theta))


def corr_matrix(locs, theta: float, other=None) -> np.ndarray:
    """Correlation matrix among ``locs``, or cross-correlation against ``other``."""
    a = np.asarray(locs, dtype=float).reshape(-1, 2)
    b = a if other is None else np.asarray(other, dtype=float).reshape(-1, 2)
    return powered_exp_corr(theta, cdist(a, b))


def cholesky_jittered(R: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; retries once with ``JITTER`` on the diagonal."""
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(R + JITTER * np.eye(len(R)))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("correlation matrix is singular even after jitter") from exc


def kriging_operator(knot_corr, cross_corr, chol=None) -> np.ndarray:
    """T = cross_corr @ inv(knot_corr), computed by triangular solves."""
    knot_corr = np.asarray(knot_corr, dtype=float)
    cross_corr = np.asarray(cross_corr, dtype=float)
    if cross_corr.shape[1] != knot_corr.shape[0]:
        raise ValueError("cross-correlation columns must match the knot count")
    L = cholesky_jittered(knot_corr) if chol is None else chol
    return sla.cho_solve((L, True), cross_corr.T).T


@dataclass(frozen=True, eq=False)
class KnotSet:
    locations: np.ndarray

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        if len(locs) < 1:
            raise ValueError("a knot set needs at least one knot")
        if len(np.unique(locs, axis=0)) != len(locs):
            raise ValueError("duplicate knot locations")
        object.__setattr__(self, "locations", locs)

    def __len__(self):
        return len(self.locations)


@dataclass(frozen=True, eq=False)
class KrigingOperator:
    """Predictive-process operator for one varying coefficient at a given theta."""

    knots: np.ndarray
    theta: float
    knot_corr: np.ndarray
    knot_chol: np.ndarray
    cross_corr: np.ndarray
    T: np.ndarray

    @classmethod
    def build(cls, coords, knots, theta: float) -> "KrigingOperator":
        knots = np.asarray(knots, dtype=float).reshape(-1, 2)
        R = corr_matrix(knots, theta)
        L = cholesky_jittered(R)
        cross = corr_matrix(coords, theta, knots)
        return cls(knots, float(theta), R, L, cross, kriging_operator(R, cross, chol=L))

    def logdet(self) -> float:
        """log det of the knot correlation matrix."""
        return 2.0 * float(np.sum(np.log(np.diag(self.knot_chol))))

    def quad(self, v) -> float:
        """v' inv(R*) v via one triangular solve."""
        w = sla.solve_triangular(self.knot_chol, v, lower=True)
        return float(w @ w)

    def precision(self) -> np.ndarray:
        return sla.cho_solve((self.knot_chol, True), np.eye(len(self.knots)))


def kmeans_knots(locs, k: int, seed: int = 0) -> KnotSet:
    """Knots at the centroids of a seeded k-means++ / Lloyd clustering."""
    locs = np.asarray(locs, dtype=float).reshape(-1, 2)
    n_distinct = len(np.unique(locs, axis=0))
    if not 1 <= k <= n_distinct:
        raise ValueError(f"k={k} must lie in [1, {n_distinct}] (number of distinct locations)")
    # tol=0 runs Lloyd iterations until the assignment stops changing
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, tol=0.0, max_iter=10_000,
                algorithm="lloyd", random_state=seed).fit(locs)
    return KnotSet(km.cluster_centers_)


def grid_knots(side: int, lo: float, hi: float) -> KnotSet:
    """side x side equally spaced knots spanning [lo, hi] in both coordinates."""
    g = np.linspace(lo, hi, side)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    return KnotSet(np.column_stack([xx.ravel(), yy.ravel()]))


def lattice_coords(nrow: int, ncol: int, spacing: float = 1.0) -> np.ndarray:
    """Row-major cell centres of an nrow x ncol lattice."""
    r, c = np.meshgrid(np.arange(nrow), np.arange(ncol), indexing="ij")
    return spacing * np.column_stack([r.ravel(), c.ravel()]).astype(float)


def lattice_adjacency(nrow: int, ncol: int, queen: bool = True) -> np.ndarray:
    """Directed neighbour pairs of a lattice (rook, or queen with corners)."""
    steps = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if queen else [])
    pairs = []
    for i in range(nrow):
        for j in range(ncol):
            for di, dj in steps:
                a, b = i + di, j + dj
                if 0 <= a < nrow and 0 <= b < ncol:
                    pairs.append((i * ncol + j, a * ncol + b))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return np.vstack([pairs, pairs[:, ::-1]])


def adjacency_matrix(pairs, num_regions: int) -> sp.csr_matrix:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    W = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                      shape=(num_regions, num_regions)).tocsr()
    W.data[:] = 1.0  # duplicates collapse to a single edge
    return W


def car_degrees(W) -> np.ndarray:
    """Diagonal of D, with isolated regions given a unit entry."""
    d = np.asarray(W.sum(axis=1)).ravel()
    return np.where(d > 0, d, 1.0)


def car_precision(W, D, omega: float, tau_sq: float) -> sp.csr_matrix:
    """Sparse CAR precision (D - omega W) / tau_sq.

    ``D`` is the degree vector; pass :func:`car_degrees` output to apply the
    isolated-region guard, or raw row sums to get the bare structure.
    """
    if not 0 < omega < 1:
        raise ValueError("omega must lie in (0, 1)")
    if tau_sq <= 0:
        raise ValueError("tau_sq must be positive")
    return ((sp.diags(np.asarray(D, dtype=float)) - omega * W) / tau_sq).tocsr()


def car_logdet(W, D, omega: float) -> float:
    """log det(D - omega W) from a sparse LU factorization."""
    M = (sp.diags(np.asarray(D, dtype=float)) - omega * W).tocsc()
    lu = splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    return float(np.sum(np.log(np.abs(lu.U.diagonal()))))


class CarLogDet:
    """Evaluates log det(D - omega W) for many omega values.

    Up to ``dense_max`` regions the eigenvalues of D^{-1/2} W D^{-1/2} are
    computed once, giving log det = sum log d + sum log(1 - omega lambda)
    in O(S) per call; larger graphs fall back to sparse LU per call.
    """

    def __init__(self, W, D, dense_max: int = 4000):
        self.W = sp.csr_matrix(W)
        self.D = np.asarray(D, dtype=float)
        self.eig = None
        if len(self.D) <= dense_max:
            r = 1.0 / np.sqrt(self.D)
            M = (self.W.multiply(r[:, None]).multiply(r[None, :])).toarray()
            self.eig = np.linalg.eigvalsh(M)
            self.log_d = float(np.sum(np.log(self.D)))

    def __call__(self, omega: float) -> float:
        if self.eig is None:
            return car_logdet(self.W, self.D, omega)
        return self.log_d + float(np.sum(np.log1p(-omega * self.eig)))


def greedy_coloring(W) -> list[np.ndarray]:
    """Partition vertices into independent sets, greedily in index order.

    Each vertex takes the smallest colour not used by an already-coloured
    neighbour. Returns one sorted index array per colour.
    """
    W = sp.csr_matrix(W)
    S = W.shape[0]
    color = np.full(S, -1, dtype=np.int64)
    for v in range(S):
        nbrs = W.indices[W.indptr[v]:W.indptr[v + 1]]
        used = set(color[nbrs][color[nbrs] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        color[v] = c
    K = int(color.max()) + 1 if S else 0
    return [np.flatnonzero(color == k) for k in range(K)]


def morans_i(values, W) -> float:
    """Global Moran's I of ``values`` under binary weights ``W``."""
    x = np.asarray(values, dtype=float).ravel()
    W = sp.csr_matrix(W)
    if len(x) < 2:
        raise ValueError("Moran's I needs at least two regions")
    dev = x - x.mean()
    ss = float(dev @ dev)
    if ss <= 0.0:
        raise ValueError("Moran's I is undefined for a constant vector")
    total = W.sum()
    if total == 0:
        raise ValueError("Moran's I is undefined without any adjacency")
    return float(len(x) / total * (dev @ (W @ dev)) / ss)


@dataclass(frozen=True, eq=False)
class SpatialOperators:
    """Per-fit spatial quantities: kriging operators, CAR structure, colours."""

    coords: np.ndarray
    krigers: tuple[KrigingOperator, ...]
    W: sp.csr_matrix
    degree: np.ndarray
    colors: tuple[np.ndarray, ...]

    def with_kriger(self, p: int, kriger: KrigingOperator) -> "SpatialOperators":
        krigers = list(self.krigers)
        krigers[p] = kriger
        return SpatialOperators(self.coords, tuple(krigers), self.W, self.degree, self.colors)

    def car_precision(self, omega: float, tau_sq: float) -> sp.csr_matrix:
        return car_precision(self.W, self.degree, omega, tau_sq)


def build_operators(data, spec, thetas=None) -> SpatialOperators:
    """Assemble knots, kriging operators, W, D and colour classes for a fit."""
    coords = data.coords
    if thetas is None:
        lo, hi = spec.priors.theta_prior
        thetas = [0.5 * (lo + hi)] * spec.num_varying
    krigers = []
    for p in range(spec.num_varying):
        if spec.knot_locations is not None:
            knots = KnotSet(spec.knot_locations[p]).locations
        else:
            knots = kmeans_knots(coords, spec.knots_per_surface[p], seed=spec.knot_seed + p).locations
        krigers.append(KrigingOperator.build(coords, knots, thetas[p]))
    W = adjacency_matrix(data.adjacency, data.num_regions)
    return SpatialOperators(coords, tuple(krigers), W, car_degrees(W), tuple(greedy_coloring(W)))
