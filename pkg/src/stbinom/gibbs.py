"""Polya-Gamma augmented Gibbs sampler for the spatio-temporal binomial model.

One sweep updates, in order: psi, delta, (beta*_p, sigma^2_p, theta_p) for
each varying coefficient, xi for every time period, tau^2, zeta and omega.
Every block draws from its own keyed random stream
``(seed, chain, iteration, block)``.

The sum-to-zero constraint on xi is applied to every retained draw by
moving the grand mean of xi into the intercept (``centering="draws"``).
The proper CAR prior is not invariant to that shift, so recentering the
chain state itself (``centering="sweep"``, applied between the xi and tau^2
updates) changes the stationary distribution of tau^2, zeta and omega;
it is kept only for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import color_layout, xi_sweep
from .model import Dataset, LatentState, ModelSpec, design_global
from .rng import (
    PG_EXACT_MAX,
    RngStream,
    as_generator,
    pg_mean,
    sample_invgamma,
    sample_mvn_prec,
    sample_pg,
    sample_truncnorm,
)
from .spatial import CarLogDet, KrigingOperator, SingularMatrixError, SpatialOperators, build_operators

log = logging.getLogger(__name__)


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 10_000
    burn_in: int = 5_000
    thin: int = 1
    xi_update: str = "chromatic"
    theta_scale: float = 0.5
    omega_scale: float = 0.5
    adapt: bool = True
    target_accept: float = 0.44
    seed: int = 0
    chain: int = 0
    workers: int = 1
    pg_exact_max: int = PG_EXACT_MAX
    keep_xi: bool = False
    centering: str = "draws"

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be non-negative")
        if self.iterations and not self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than the total number of iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.theta_scale <= 0 or self.omega_scale <= 0:
            raise ValueError("proposal scales must be positive")
        if self.xi_update not in ("chromatic", "block"):
            raise ValueError(f"xi_update must be 'chromatic' or 'block', got {self.xi_update!r}")
        if self.centering not in ("draws", "sweep"):
            raise ValueError(f"centering must be 'draws' or 'sweep', got {self.centering!r}")

    @property
    def num_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


class GibbsContext:
    """Fixed per-fit arrays plus the current kriging operators and surfaces.

    ``btilde[p]`` caches ``T_p @ beta_star[p]``; the update functions keep it
    in sync whenever beta*_p or theta_p changes.
    """

    def __init__(self, data: Dataset, spec: ModelSpec, ops: SpatialOperators | None = None,
                 state: LatentState | None = None):
        spec.check(data)
        self.data = data
        self.spec = spec
        self.priors = spec.priors
        self.S, self.T = data.num_regions, data.horizon
        self.P = spec.num_varying
        self.cs = data.s
        self.ct = data.t - 1
        self.Z = design_global(data.z)
        self.X = data.x
        self.n = data.n
        self.kappa = data.kappa
        if ops is None:
            thetas = None if state is None else list(state.theta)
            ops = build_operators(data, spec, thetas)
        self.ops = ops
        self.layout = color_layout(ops.W, list(ops.colors))
        self.degree = ops.degree
        self.logdet = CarLogDet(ops.W, ops.degree)
        self.btilde = [np.zeros(self.S) for _ in range(self.P)]
        self.times = np.arange(1, self.T + 1, dtype=float)
        self._build_grid()
        if state is not None:
            self.refresh(state)

    def _build_grid(self):
        S, T = self.S, self.T
        Zg = np.full((S, T, self.Z.shape[1]), np.nan)
        Zg[:, :, 0] = 1.0  # the intercept is known everywhere
        Xg = np.full((S, T, self.P), np.nan)
        Zg[self.cs, self.ct] = self.Z
        Xg[self.cs, self.ct] = self.X
        u = self.data.unobserved
        if u is not None and len(u):
            Zg[u.s, u.t - 1] = design_global(u.z)
            Xg[u.s, u.t - 1] = u.x
        self.grid_complete = bool(np.isfinite(Zg).all() and np.isfinite(Xg).all())
        self.Zg, self.Xg = (Zg, Xg) if self.grid_complete else (None, None)

    def refresh(self, state: LatentState) -> None:
        """Rebuild kriging operators for ``state.theta`` and recompute surfaces."""
        for p in range(self.P):
            if self.ops.krigers[p].theta != state.theta[p]:
                kr = KrigingOperator.build(self.ops.coords, self.ops.krigers[p].knots, state.theta[p])
                self.ops = self.ops.with_kriger(p, kr)
            self.btilde[p] = self.ops.krigers[p].T @ state.beta_star[p]

    def nu_fixed(self, state: LatentState) -> np.ndarray:
        """Z'delta + sum_p X_p btilde_p at the observed cells (no xi)."""
        nu = self.Z @ state.delta
        for p in range(self.P):
            nu = nu + self.X[:, p] * self.btilde[p][self.cs]
        return nu

    def nu(self, state: LatentState) -> np.ndarray:
        return self.nu_fixed(state) + state.xi[self.cs, self.ct]

    def nu_grid(self, state: LatentState) -> np.ndarray:
        """Linear predictor on every (s, t); needs covariates at all cells."""
        nu = self.Zg @ state.delta + state.xi
        for p in range(self.P):
            nu = nu + self.Xg[:, :, p] * self.btilde[p][:, None]
        return nu

    def region_weights(self, state: LatentState, p: int, nu_rest: np.ndarray):
        """Per-region sums of psi x_p^2 and x_p (kappa - psi nu_rest)."""
        x = self.X[:, p]
        w = np.bincount(self.cs, weights=state.psi * x * x, minlength=self.S)
        r = np.bincount(self.cs, weights=x * (self.kappa - state.psi * nu_rest), minlength=self.S)
        return w, r


def initial_state(ctx: GibbsContext) -> LatentState:
    """Deterministic starting point: zeros for effects, unit variances,
    prior-centre correlations and prior-mean latent psi."""
    pr = ctx.priors
    lo, hi = pr.theta_prior
    state = LatentState(
        delta=np.zeros(ctx.Z.shape[1]),
        beta_star=[np.zeros(len(k.knots)) for k in ctx.ops.krigers],
        sigma_sq=np.ones(ctx.P),
        theta=np.full(ctx.P, 0.5 * (lo + hi)),
        xi=np.zeros((ctx.S, ctx.T)),
        psi=pg_mean(ctx.n, 0.0),
        tau_sq=1.0,
        omega=pr.a_omega / (pr.a_omega + pr.b_omega),
        zeta=0.0,
    )
    ctx.refresh(state)
    return state


def update_psi(state: LatentState, ctx: GibbsContext, rng, exact_max: int = PG_EXACT_MAX) -> np.ndarray:
    state.psi = sample_pg(ctx.n, ctx.nu(state), rng, exact_max=exact_max)
    return state.psi


def update_delta(state: LatentState, ctx: GibbsContext, rng) -> np.ndarray:
    Z = ctx.Z
    nu_rest = ctx.nu(state) - Z @ state.delta
    prec = (Z.T * state.psi) @ Z + np.eye(Z.shape[1]) / ctx.priors.sigma_delta_sq
    rhs = Z.T @ (ctx.kappa - state.psi * nu_rest)
    state.delta = sample_mvn_prec(rhs, prec, rng)
    return state.delta


def beta_star_conditional(state: LatentState, ctx: GibbsContext, p: int):
    """Precision and linear term of the Gaussian full conditional of beta*_p."""
    kr = ctx.ops.krigers[p]
    nu_rest = ctx.nu(state) - ctx.X[:, p] * ctx.btilde[p][ctx.cs]
    w, r = ctx.region_weights(state, p, nu_rest)
    prec = (kr.T.T * w) @ kr.T + kr.precision() / state.sigma_sq[p]
    return prec, kr.T.T @ r


def update_beta_star(state: LatentState, ctx: GibbsContext, p: int, rng) -> np.ndarray:
    prec, rhs = beta_star_conditional(state, ctx, p)
    state.beta_star[p] = sample_mvn_prec(rhs, prec, rng)
    ctx.btilde[p] = ctx.ops.krigers[p].T @ state.beta_star[p]
    return state.beta_star[p]


def sigma_sq_conditional(state: LatentState, ctx: GibbsContext, p: int) -> tuple[float, float]:
    a, b = ctx.priors.sigma_prior(p)
    kr = ctx.ops.krigers[p]
    return len(kr.knots) / 2.0 + a, kr.quad(state.beta_star[p]) / 2.0 + b


def update_sigma_sq(state: LatentState, ctx: GibbsContext, p: int, rng) -> float:
    shape, rate = sigma_sq_conditional(state, ctx, p)
    state.sigma_sq[p] = sample_invgamma(shape, rate, rng)
    return state.sigma_sq[p]


def theta_log_target(state: LatentState, ctx: GibbsContext, p: int, theta: float,
                     kriger: KrigingOperator | None = None, weights=None):
    """Unnormalized log full conditional of theta_p, with its kriging operator.

    Returns ``(-inf, None)`` outside the prior support or when the knot
    correlation matrix cannot be factorized. ``weights`` may carry the
    precomputed :meth:`GibbsContext.region_weights`.
    """
    lo, hi = ctx.priors.theta_prior
    if not lo < theta < hi:
        return -np.inf, None
    if kriger is None:
        try:
            kriger = KrigingOperator.build(ctx.ops.coords, ctx.ops.krigers[p].knots, theta)
        except SingularMatrixError:
            return -np.inf, None
    w, r = _theta_weights(state, ctx, p) if weights is None else weights
    bt = kriger.T @ state.beta_star[p]
    loglik = -0.5 * float(w @ (bt * bt)) + float(r @ bt)
    logprior = -0.5 * kriger.quad(state.beta_star[p]) / state.sigma_sq[p] - 0.5 * kriger.logdet()
    return loglik + logprior, kriger


def _theta_weights(state: LatentState, ctx: GibbsContext, p: int):
    nu_rest = ctx.nu(state) - ctx.X[:, p] * ctx.btilde[p][ctx.cs]
    return ctx.region_weights(state, p, nu_rest)


def _logit(u):
    return np.log(u) - np.log1p(-u)


def _expit(v):
    return 1.0 / (1.0 + np.exp(-v))


def update_theta_mh(state: LatentState, ctx: GibbsContext, p: int, proposal_scale: float, rng) -> bool:
    """Random-walk Metropolis-Hastings on the logit of theta_p within its prior bounds."""
    gen = as_generator(rng)
    lo, hi = ctx.priors.theta_prior
    cur = float(state.theta[p])
    u = (cur - lo) / (hi - lo)
    prop_u = _expit(_logit(u) + proposal_scale * gen.standard_normal())
    prop = lo + (hi - lo) * prop_u
    log_u = np.log(gen.random())
    if prop == cur:
        return True
    weights = _theta_weights(state, ctx, p)
    cur_lp, _ = theta_log_target(state, ctx, p, cur, ctx.ops.krigers[p], weights)
    prop_lp, kr = theta_log_target(state, ctx, p, prop, weights=weights)
    # Jacobian of the logit map: d theta / d logit = (theta - lo)(hi - theta)/(hi - lo)
    log_ratio = (prop_lp + np.log(prop - lo) + np.log(hi - prop)) - (
        cur_lp + np.log(cur - lo) + np.log(hi - cur))
    if kr is not None and log_u < log_ratio:
        state.theta[p] = prop
        ctx.ops = ctx.ops.with_kriger(p, kr)
        ctx.btilde[p] = kr.T @ state.beta_star[p]
        return True
    return False


def _data_grids(state: LatentState, ctx: GibbsContext):
    """psi and kappa - psi nu* scattered to S x T arrays (zero where unobserved)."""
    prec = np.zeros((ctx.S, ctx.T))
    lin = np.zeros((ctx.S, ctx.T))
    nu_star = ctx.nu_fixed(state)
    prec[ctx.cs, ctx.ct] = state.psi
    lin[ctx.cs, ctx.ct] = ctx.kappa - state.psi * nu_star
    return prec, lin


def update_xi_chromatic(state: LatentState, ctx: GibbsContext, t: int | None, rng,
                        workers: int = 1) -> np.ndarray:
    """Single-site Gibbs on xi_t (1-based ``t``), one colour class at a time.

    ``t=None`` sweeps every period in order 1..T with one kernel call.
    """
    gen = as_generator(rng)
    prec, lin = _data_grids(state, ctx)
    z = gen.standard_normal((ctx.S, ctx.T))
    t0, t1 = (0, ctx.T) if t is None else (t - 1, t)
    xi_sweep(state.xi, t0, t1, ctx.layout, ctx.degree, prec, lin, z,
             state.zeta, state.omega, state.tau_sq, workers=workers)
    return state.xi if t is None else state.xi[:, t - 1]


def xi_block_conditional(state: LatentState, ctx: GibbsContext, t: int, data_grids=None):
    """Precision and linear term of the joint full conditional of xi_t (1-based t)."""
    prec_d, lin_d = _data_grids(state, ctx) if data_grids is None else data_grids
    A = ctx.ops.car_precision(state.omega, state.tau_sq).toarray()
    j = t - 1
    neigh = np.zeros(ctx.S)
    if j > 0:
        neigh += state.xi[:, j - 1]
    if j < ctx.T - 1:
        neigh += state.xi[:, j + 1]
    c = 1.0 + state.zeta ** 2 if j < ctx.T - 1 else 1.0
    prec = np.diag(prec_d[:, j]) + c * A
    rhs = lin_d[:, j] + state.zeta * (A @ neigh)
    return prec, rhs


def update_xi_block(state: LatentState, ctx: GibbsContext, t: int, rng, data_grids=None) -> np.ndarray:
    prec, rhs = xi_block_conditional(state, ctx, t, data_grids)
    state.xi[:, t - 1] = sample_mvn_prec(rhs, prec, rng)
    return state.xi[:, t - 1]


def apply_sum_to_zero(state: LatentState) -> LatentState:
    """Move the grand mean of xi into the intercept; every nu is unchanged."""
    m = state.xi.mean()
    state.xi -= m
    state.delta[0] += m
    return state


def _innovations(state: LatentState) -> np.ndarray:
    e = state.xi.copy()
    e[:, 1:] -= state.zeta * state.xi[:, :-1]
    return e


def _car_form(ctx: GibbsContext, omega: float, a: np.ndarray, b: np.ndarray) -> float:
    """sum over columns of a_t' (D - omega W) b_t."""
    return float(np.sum(ctx.degree[:, None] * a * b) - omega * np.sum(a * (ctx.ops.W @ b)))


def tau_sq_conditional(state: LatentState, ctx: GibbsContext) -> tuple[float, float]:
    e = _innovations(state)
    q = _car_form(ctx, state.omega, e, e)
    return ctx.T * ctx.S / 2.0 + ctx.priors.a_tau, 0.5 * q + ctx.priors.b_tau


def update_tau_sq(state: LatentState, ctx: GibbsContext, rng) -> float:
    shape, rate = tau_sq_conditional(state, ctx)
    state.tau_sq = sample_invgamma(shape, rate, rng)
    return state.tau_sq


def zeta_conditional(state: LatentState, ctx: GibbsContext) -> tuple[float, float]:
    """Mean and variance of the (untruncated) normal full conditional of zeta."""
    prior_prec = 1.0 / ctx.priors.sigma_zeta_sq
    if ctx.T < 2:
        return 0.0, 1.0 / prior_prec
    prev, nxt = state.xi[:, :-1], state.xi[:, 1:]
    var = 1.0 / (_car_form(ctx, state.omega, prev, prev) / state.tau_sq + prior_prec)
    return var * _car_form(ctx, state.omega, prev, nxt) / state.tau_sq, var


def update_zeta(state: LatentState, ctx: GibbsContext, rng) -> float:
    mu, var = zeta_conditional(state, ctx)
    state.zeta = sample_truncnorm(mu, var, -1.0, 1.0, rng)
    return state.zeta


def omega_log_target(state: LatentState, ctx: GibbsContext, omega: float, forms=None) -> float:
    """Unnormalized log full conditional of omega."""
    if not 0.0 < omega < 1.0:
        return -np.inf
    if forms is None:
        forms = _omega_forms(state, ctx)
    qD, qW = forms
    pr = ctx.priors
    return (-0.5 * (qD - omega * qW) / state.tau_sq
            + 0.5 * ctx.T * ctx.logdet(omega)
            + (pr.a_omega - 1.0) * np.log(omega) + (pr.b_omega - 1.0) * np.log1p(-omega))


def _omega_forms(state: LatentState, ctx: GibbsContext):
    e = _innovations(state)
    qD = float(np.sum(ctx.degree[:, None] * e * e))
    qW = float(np.sum(e * (ctx.ops.W @ e)))
    return qD, qW


def update_omega_mh(state: LatentState, ctx: GibbsContext, proposal_scale: float, rng) -> bool:
    """Random-walk Metropolis-Hastings on logit(omega)."""
    gen = as_generator(rng)
    cur = float(state.omega)
    prop = float(_expit(_logit(cur) + proposal_scale * gen.standard_normal()))
    log_u = np.log(gen.random())
    if prop == cur:
        return True
    if not 0.0 < prop < 1.0:
        return False
    forms = _omega_forms(state, ctx)
    log_ratio = (omega_log_target(state, ctx, prop, forms) + np.log(prop) + np.log1p(-prop)
                 - omega_log_target(state, ctx, cur, forms) - np.log(cur) - np.log1p(-cur))
    if log_u < log_ratio:
        state.omega = prop
        return True
    return False


@dataclass
class PosteriorDraws:
    """Retained draws of one chain plus per-cell summaries."""

    delta: np.ndarray
    beta_star: list[np.ndarray]
    btilde: np.ndarray
    sigma_sq: np.ndarray
    theta: np.ndarray
    tau_sq: np.ndarray
    omega: np.ndarray
    zeta: np.ndarray
    acceptance: dict
    nu_mean: np.ndarray
    nu_var: np.ndarray
    slopes: np.ndarray | None
    xi: np.ndarray | None
    final_state: LatentState
    proposal_scales: dict = field(default_factory=dict)

    @property
    def num_draws(self) -> int:
        return len(self.tau_sq)

    def kriged(self, p: int) -> np.ndarray:
        """Draws of the kriged surface btilde_p, shape (G, S)."""
        return self.btilde[:, p, :]


class _Recorder:
    def __init__(self, ctx: GibbsContext, config: ChainConfig):
        G = config.num_retained
        P, S, T = ctx.P, ctx.S, ctx.T
        self.ctx = ctx
        self.g = 0
        self.delta = np.empty((G, ctx.Z.shape[1]))
        self.beta_star = [np.empty((G, len(k.knots))) for k in ctx.ops.krigers]
        self.btilde = np.empty((G, P, S))
        self.sigma_sq = np.empty((G, P))
        self.theta = np.empty((G, P))
        self.tau_sq = np.empty(G)
        self.omega = np.empty(G)
        self.zeta = np.empty(G)
        m = ctx.data.num_cells
        self.nu_sum = np.zeros(m)
        self.nu_sq = np.zeros(m)
        self.slopes = np.empty((G, S)) if ctx.grid_complete and T >= 2 else None
        self.xi = np.empty((G, S, T)) if config.keep_xi else None
        tc = ctx.times - ctx.times.mean()
        self.slope_weights = tc / float(tc @ tc) if T >= 2 else None

    def record(self, state: LatentState):
        g, ctx = self.g, self.ctx
        # stored draws satisfy the sum-to-zero constraint; nu is unaffected
        m = state.xi.mean()
        self.delta[g] = state.delta
        self.delta[g, 0] += m
        for p in range(ctx.P):
            self.beta_star[p][g] = state.beta_star[p]
            self.btilde[g, p] = ctx.btilde[p]
        self.sigma_sq[g] = state.sigma_sq
        self.theta[g] = state.theta
        self.tau_sq[g] = state.tau_sq
        self.omega[g] = state.omega
        self.zeta[g] = state.zeta
        nu = ctx.nu(state)
        self.nu_sum += nu
        self.nu_sq += nu * nu
        if self.slopes is not None:
            self.slopes[g] = ctx.nu_grid(state) @ self.slope_weights
        if self.xi is not None:
            self.xi[g] = state.xi - m
        self.g += 1


def run_chain(data: Dataset, spec: ModelSpec, config: ChainConfig, init: LatentState | None = None,
              ops: SpatialOperators | None = None, callback=None) -> PosteriorDraws:
    """Run one chain and return its retained draws.

    ``init`` overrides the default starting state. ``callback(i, state)``
    is invoked after every sweep. ``final_state`` in the result is the raw
    chain state (not recentered), suitable for continuing the chain.
    """
    ctx = GibbsContext(data, spec, ops, state=init)
    if init is None:
        state = initial_state(ctx)
    else:
        state = init.copy()
        state.check(spec, data)
        ctx.refresh(state)
    P = ctx.P
    theta_scale = np.full(P, float(config.theta_scale))
    omega_scale = float(config.omega_scale)
    theta_acc = np.zeros(P)
    omega_acc = 0
    n_post = 0
    rec = _Recorder(ctx, config)
    base = RngStream(config.seed).child(config.chain)

    for i in range(config.iterations):
        it = base.child(i)
        try:
            update_psi(state, ctx, it.child("psi"), config.pg_exact_max)
            update_delta(state, ctx, it.child("delta"))
            acc_t = np.zeros(P, dtype=bool)
            for p in range(P):
                update_beta_star(state, ctx, p, it.child("beta", p))
                update_sigma_sq(state, ctx, p, it.child("sigma", p))
                acc_t[p] = update_theta_mh(state, ctx, p, theta_scale[p], it.child("theta", p))
            if config.xi_update == "chromatic":
                update_xi_chromatic(state, ctx, None, it.child("xi"), workers=config.workers)
            else:
                for t in range(1, ctx.T + 1):
                    update_xi_block(state, ctx, t, it.child("xi", t))
            if config.centering == "sweep":
                apply_sum_to_zero(state)
            update_tau_sq(state, ctx, it.child("tau"))
            update_zeta(state, ctx, it.child("zeta"))
            acc_o = update_omega_mh(state, ctx, omega_scale, it.child("omega"))
        except Exception as exc:
            raise ChainError(f"iteration {i}: {exc}") from exc

        if i < config.burn_in:
            if config.adapt:
                gamma = (i + 1) ** -0.6
                theta_scale *= np.exp(gamma * (acc_t - config.target_accept))
                omega_scale *= np.exp(gamma * (float(acc_o) - config.target_accept))
        else:
            theta_acc += acc_t
            omega_acc += acc_o
            n_post += 1
            if (i - config.burn_in + 1) % config.thin == 0:
                rec.record(state)
        if callback is not None:
            callback(i, state)

    G = rec.g
    nu_mean = rec.nu_sum / G if G else ctx.nu(state)
    nu_var = rec.nu_sq / G - nu_mean ** 2 if G else np.zeros_like(nu_mean)
    return PosteriorDraws(
        delta=rec.delta[:G],
        beta_star=[b[:G] for b in rec.beta_star],
        btilde=rec.btilde[:G],
        sigma_sq=rec.sigma_sq[:G],
        theta=rec.theta[:G],
        tau_sq=rec.tau_sq[:G],
        omega=rec.omega[:G],
        zeta=rec.zeta[:G],
        acceptance={"theta": theta_acc / max(n_post, 1), "omega": omega_acc / max(n_post, 1)},
        nu_mean=nu_mean,
        nu_var=np.maximum(nu_var, 0.0),
        slopes=None if rec.slopes is None else rec.slopes[:G],
        xi=None if rec.xi is None else rec.xi[:G],
        final_state=state,
        proposal_scales={"theta": theta_scale.copy(), "omega": omega_scale},
    )
