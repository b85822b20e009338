"""Domain types, dataset validation and linear predictors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit


class DatasetError(ValueError):
    """Raised when a dataset violates one or more structural invariants.

    ``problems`` lists every violation found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Region:
    id: str
    centroid: tuple[float, float]


@dataclass(frozen=True, eq=False)
class CellCovariates:
    """Covariates at (s, t) cells that carry no counts.

    Used only to extend linear predictors to unobserved cells for trend
    summaries; never enters the likelihood.
    """

    s: np.ndarray
    t: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return len(self.s)


def _as_columns(a, m: int) -> np.ndarray:
    if a is None:
        return np.zeros((m, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == m:
        return a
    return a.reshape(m, -1)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed binomial counts on a set of regions over ``horizon`` periods.

    Cells are stored as parallel arrays: ``s`` (0-based region index),
    ``t`` (1-based time index), ``y`` successes, ``n`` trials, ``z`` global
    covariates (m x Q, intercept excluded) and ``x`` spatially varying
    covariates (m x P). ``adjacency`` holds directed index pairs and must
    contain both orientations of every edge.
    """

    regions: tuple[Region, ...]
    horizon: int
    s: np.ndarray
    t: np.ndarray
    y: np.ndarray
    n: np.ndarray
    z: np.ndarray
    x: np.ndarray
    adjacency: np.ndarray
    unobserved: CellCovariates | None = None

    @classmethod
    def from_arrays(cls, regions, horizon, s, t, y, n, z=None, x=None,
                    adjacency=(), unobserved=None) -> "Dataset":
        s = np.asarray(s, dtype=np.int64).reshape(-1)
        m = len(s)
        z = _as_columns(z, m)
        x = _as_columns(x, m)
        adj = np.asarray(adjacency, dtype=np.int64).reshape(-1, 2)
        return cls(
            regions=tuple(regions),
            horizon=int(horizon),
            s=s,
            t=np.asarray(t, dtype=np.int64).reshape(-1),
            y=np.asarray(y, dtype=np.int64).reshape(-1),
            n=np.asarray(n, dtype=np.int64).reshape(-1),
            z=z,
            x=x,
            adjacency=adj,
            unobserved=unobserved,
        )

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @property
    def num_cells(self) -> int:
        return len(self.s)

    @property
    def num_global(self) -> int:
        return self.z.shape[1]

    @property
    def num_varying(self) -> int:
        return self.x.shape[1]

    @property
    def coords(self) -> np.ndarray:
        return np.array([r.centroid for r in self.regions], dtype=float).reshape(-1, 2)

    @property
    def kappa(self) -> np.ndarray:
        return self.y - self.n / 2.0

    def edges(self) -> np.ndarray:
        """Undirected edges as (i, j) pairs with i < j, deduplicated."""
        a = self.adjacency
        if len(a) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        lo = np.minimum(a[:, 0], a[:, 1])
        hi = np.maximum(a[:, 0], a[:, 1])
        return np.unique(np.column_stack([lo, hi]), axis=0)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.regions != other.regions or self.horizon != other.horizon:
            return False
        for name in ("s", "t", "y", "n", "z", "x"):
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        if not np.array_equal(self.edges(), other.edges()):
            return False
        u, v = self.unobserved, other.unobserved
        if (u is None) != (v is None):
            return False
        if u is not None:
            return all(np.array_equal(getattr(u, k), getattr(v, k)) for k in ("s", "t", "z", "x"))
        return True

    __hash__ = None


def validate_dataset(raw: Dataset) -> Dataset:
    """Return ``raw`` unchanged if it satisfies every invariant.

    Raises
    ------
    DatasetError
        Listing every violation: duplicate ids or cells, counts outside
        ``0 <= y <= n`` with ``n >= 1``, out-of-range indices, and a
        non-symmetric or reflexive adjacency relation.
    """
    problems: list[str] = []
    S, T = raw.num_regions, raw.horizon
    ids = [r.id for r in raw.regions]
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for i in ids:
            if i in seen:
                dups.append(i)
            seen.add(i)
        problems.append(f"duplicate region ids {sorted(set(dups))}")
    for r in raw.regions:
        if len(r.centroid) != 2 or not np.all(np.isfinite(r.centroid)):
            problems.append(f"non-finite centroid for region {r.id}")
    if T < 1:
        problems.append(f"horizon must be >= 1, got {T}")

    m = raw.num_cells
    for name in ("t", "y", "n"):
        if len(getattr(raw, name)) != m:
            problems.append(f"cell array {name} has length {len(getattr(raw, name))}, expected {m}")
    if raw.z.shape[0] != m or raw.x.shape[0] != m:
        problems.append("covariate arrays do not match the number of cells")
    if problems:
        raise DatasetError(problems)

    for i in range(m):
        s, t, y, n = int(raw.s[i]), int(raw.t[i]), int(raw.y[i]), int(raw.n[i])
        if not 0 <= s < S:
            problems.append(f"region index out of range at cell {i}: s={s}")
        if not 1 <= t <= T:
            problems.append(f"time index out of range at cell {i}: t={t}")
        if n < 1:
            problems.append(f"n below 1 at ({s},{t})")
        if y < 0:
            problems.append(f"negative y at ({s},{t})")
        if y > n:
            problems.append(f"y exceeds n at ({s},{t})")
    if m:
        keys = raw.s * (T + 1) + raw.t
        uniq, counts = np.unique(keys, return_counts=True)
        for k in uniq[counts > 1]:
            problems.append(f"duplicate cell ({int(k) // (T + 1)},{int(k) % (T + 1)})")
    if not (np.all(np.isfinite(raw.z)) and np.all(np.isfinite(raw.x))):
        problems.append("non-finite covariate values")

    adj = raw.adjacency
    if len(adj):
        bad = (adj < 0) | (adj >= S)
        for a, b in adj[bad.any(axis=1)]:
            problems.append(f"adjacency index out of range: ({a},{b})")
        for a, b in adj[adj[:, 0] == adj[:, 1]]:
            problems.append(f"reflexive adjacency at ({a},{a})")
        pairs = {(int(a), int(b)) for a, b in adj}
        for a, b in sorted(pairs):
            if (b, a) not in pairs:
                problems.append(f"asymmetric adjacency: ({a},{b}) without ({b},{a})")

    u = raw.unobserved
    if u is not None:
        if not (len(u.t) == len(u) and u.z.shape == (len(u), raw.num_global)
                and u.x.shape == (len(u), raw.num_varying)):
            problems.append("unobserved covariate arrays are inconsistent")
        else:
            obs = set(zip(raw.s.tolist(), raw.t.tolist()))
            for s, t in zip(u.s.tolist(), u.t.tolist()):
                if not (0 <= s < S and 1 <= t <= T):
                    problems.append(f"unobserved cell index out of range: ({s},{t})")
                elif (s, t) in obs:
                    problems.append(f"unobserved cell duplicates an observed cell: ({s},{t})")

    if problems:
        raise DatasetError(problems)
    return raw


@dataclass(frozen=True)
class HyperParams:
    """Prior hyperparameters; defaults are the simulation-study values.

    ``a_sigma``/``b_sigma`` may be a single value shared by every varying
    coefficient or one value per coefficient.
    """

    sigma_delta_sq: float = 1000.0
    a_sigma: float | tuple[float, ...] = 2.0
    b_sigma: float | tuple[float, ...] = 2.0
    a_tau: float = 2.0
    b_tau: float = 2.0
    a_omega: float = 900.0
    b_omega: float = 100.0
    sigma_zeta_sq: float = 10.0
    theta_prior: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        scalars = [self.sigma_delta_sq, self.a_tau, self.b_tau, self.a_omega,
                   self.b_omega, self.sigma_zeta_sq]
        scalars += list(np.atleast_1d(self.a_sigma)) + list(np.atleast_1d(self.b_sigma))
        if not all(v > 0 for v in scalars):
            raise ValueError("all prior hyperparameters must be strictly positive")
        lo, hi = self.theta_prior
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"theta_prior must be a sub-interval of (0, 1), got {self.theta_prior}")

    def sigma_prior(self, p: int) -> tuple[float, float]:
        a = np.atleast_1d(self.a_sigma)
        b = np.atleast_1d(self.b_sigma)
        return float(a[p] if len(a) > 1 else a[0]), float(b[p] if len(b) > 1 else b[0])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Model dimensions and knot configuration.

    Knots come from ``knot_locations`` when given (one array per varying
    coefficient), otherwise from seeded K-means on region centroids with
    ``knots_per_surface`` clusters.
    """

    num_global: int = 0
    num_varying: int = 0
    knots_per_surface: tuple[int, ...] = ()
    priors: HyperParams = field(default_factory=HyperParams)
    knot_locations: tuple[np.ndarray, ...] | None = None
    knot_seed: int = 0

    def __post_init__(self):
        if self.num_global < 0 or self.num_varying < 0:
            raise ValueError("covariate counts must be non-negative")
        if self.knot_locations is not None:
            locs = tuple(np.asarray(k, dtype=float).reshape(-1, 2) for k in self.knot_locations)
            object.__setattr__(self, "knot_locations", locs)
            object.__setattr__(self, "knots_per_surface", tuple(len(k) for k in locs))
        if len(self.knots_per_surface) != self.num_varying:
            raise ValueError(
                f"need one knot count per varying coefficient: got {len(self.knots_per_surface)}"
                f" for P={self.num_varying}")
        if any(k < 1 for k in self.knots_per_surface):
            raise ValueError("each surface needs at least one knot")

    def check(self, data: Dataset) -> None:
        if data.num_global != self.num_global or data.num_varying != self.num_varying:
            raise ValueError(
                f"dataset has Q={data.num_global}, P={data.num_varying}; model expects "
                f"Q={self.num_global}, P={self.num_varying}")
        if self.knot_locations is None and any(k > data.num_regions for k in self.knots_per_surface):
            raise ValueError("knots_per_surface exceeds the number of regions")


@dataclass
class LatentState:
    """One full MCMC state. ``xi`` is S x T (column t-1 holds time t)."""

    delta: np.ndarray
    beta_star: list[np.ndarray]
    sigma_sq: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    psi: np.ndarray
    tau_sq: float
    omega: float
    zeta: float

    @classmethod
    def zeros(cls, spec: ModelSpec, data: Dataset) -> "LatentState":
        return cls(
            delta=np.zeros(spec.num_global + 1),
            beta_star=[np.zeros(k) for k in spec.knots_per_surface],
            sigma_sq=np.ones(spec.num_varying),
            theta=np.full(spec.num_varying, 0.5),
            xi=np.zeros((data.num_regions, data.horizon)),
            psi=np.full(data.num_cells, 0.25),
            tau_sq=1.0,
            omega=0.5,
            zeta=0.0,
        )

    def copy(self) -> "LatentState":
        return replace(
            self,
            delta=self.delta.copy(),
            beta_star=[b.copy() for b in self.beta_star],
            sigma_sq=self.sigma_sq.copy(),
            theta=self.theta.copy(),
            xi=self.xi.copy(),
            psi=self.psi.copy(),
        )

    def check(self, spec: ModelSpec, data: Dataset) -> None:
        problems = []
        if self.delta.shape != (spec.num_global + 1,):
            problems.append(f"delta has shape {self.delta.shape}")
        if [len(b) for b in self.beta_star] != list(spec.knots_per_surface):
            problems.append("beta_star lengths do not match the knot counts")
        if self.sigma_sq.shape != (spec.num_varying,) or self.theta.shape != (spec.num_varying,):
            problems.append("sigma_sq/theta must have one entry per varying coefficient")
        if self.xi.shape != (data.num_regions, data.horizon):
            problems.append(f"xi has shape {self.xi.shape}")
        if self.psi.shape != (data.num_cells,):
            problems.append(f"psi has shape {self.psi.shape}")
        if np.any(self.sigma_sq <= 0) or self.tau_sq <= 0 or np.any(self.psi <= 0):
            problems.append("variance components and psi must be positive")
        if not 0 < self.omega < 1 or not -1 < self.zeta < 1:
            problems.append("omega must lie in (0,1) and zeta in (-1,1)")
        if problems:
            raise ValueError("; ".join(problems))


def logistic(v):
    """Inverse logit, 1 / (1 + exp(-v)); saturates without overflow."""
    return expit(v)


def design_global(z: np.ndarray) -> np.ndarray:
    """Prepend the intercept column to the global covariates."""
    z = np.asarray(z, dtype=float)
    return np.column_stack([np.ones(len(z)), z])


def linear_predictor(state: LatentState, data: Dataset, ops, s=None, t=None, z=None, x=None) -> np.ndarray:
    """Linear predictor nu = Z'delta + sum_p X_p * (T_p beta*_p)[s] + xi[s, t].

    Evaluated at the observed cells by default; pass ``s``, ``t``, ``z`` and
    ``x`` to evaluate at arbitrary (s, t) cells, e.g. unobserved ones.
    """
    if s is None:
        s, t, z, x = data.s, data.t, data.z, data.x
    s = np.asarray(s)
    t = np.asarray(t)
    z = np.asarray(z, dtype=float).reshape(len(s), -1)
    x = np.asarray(x, dtype=float).reshape(len(s), -1)
    if z.shape[1] + 1 != len(state.delta):
        raise ValueError(f"delta has length {len(state.delta)} but Q={z.shape[1]}")
    if x.shape[1] != len(state.beta_star) or len(ops.krigers) != len(state.beta_star):
        raise ValueError("number of varying coefficients does not match the kriging operators")
    if state.xi.shape != (data.num_regions, data.horizon):
        raise ValueError(f"xi has shape {state.xi.shape}")
    nu = state.delta[0] + z @ state.delta[1:]
    for p, kr in enumerate(ops.krigers):
        if kr.T.shape[1] != len(state.beta_star[p]):
            raise ValueError(f"beta_star[{p}] does not match its kriging operator")
        nu = nu + x[:, p] * (kr.T @ state.beta_star[p])[s]
    return nu + state.xi[s, t - 1]
