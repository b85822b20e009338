"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds and tolerances are fixed here before any run. Criteria 5 and 6
fit the full 169-region, 60-period design and take several minutes each.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from stbinom.cli import main
from stbinom.gibbs import (
    ChainConfig,
    GibbsContext,
    apply_sum_to_zero,
    initial_state,
    run_chain,
    update_sigma_sq,
    update_tau_sq,
    update_xi_block,
    update_xi_chromatic,
    sigma_sq_conditional,
    tau_sq_conditional,
)
from stbinom.model import Dataset, LatentState, ModelSpec, Region, linear_predictor
from stbinom.rng import RngStream, pg_mean, pg_variance, sample_pg
from stbinom.sim import SimDesign, fit_spec, generate_dataset, generate_gpp_surface, run_replications
from stbinom.spatial import adjacency_matrix, build_operators, lattice_adjacency, lattice_coords, morans_i
from stbinom.summary import batch_means_se

from conftest import lattice_dataset


@pytest.fixture
def report(capsys):
    def _report(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return _report


def lattice_regions(nrow, ncol):
    return [Region(f"r{i}", tuple(map(float, c))) for i, c in enumerate(lattice_coords(nrow, ncol))]


# ---------------------------------------------------------------- 1

def test_criterion_1_pg_moments(report):
    start = time.perf_counter()
    worst = 0.0
    for b in (1, 2, 10):
        for c in (0.0, 1.0, 2.0):
            draws = sample_pg(np.full(100_000, b), c, RngStream(1, (b, int(c))))
            exact = b / 4.0 if c == 0 else b / (2 * c) * np.tanh(c / 2)
            se = np.sqrt(pg_variance(b, c) / len(draws))
            worst = max(worst, abs(draws.mean() - exact) / se)
    elapsed = time.perf_counter() - start
    report(1, worst < 3.0 and elapsed < 30,
           f"max |mean - b tanh(c/2)/(2c)| = {worst:.2f} SE (limit 3), {elapsed:.1f}s (limit 30s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_chromatic_block_equivalence(report):
    start = time.perf_counter()
    side, T, sweeps = 4, 5, 20_000
    rng = np.random.default_rng(2)
    S = side * side
    s = np.repeat(np.arange(S), T)
    t = np.tile(np.arange(1, T + 1), S)
    n = rng.integers(100, 201, size=S * T)
    y = rng.binomial(n, 0.3)
    data = Dataset.from_arrays(lattice_regions(side, side), T, s, t, y, n,
                               adjacency=lattice_adjacency(side, side))
    ctx = GibbsContext(data, ModelSpec(0, 0))
    means, ses = [], []
    for mode in ("chromatic", "block"):
        state = initial_state(ctx)
        state.delta[:] = -1.0
        state.psi = pg_mean(data.n, -1.0)
        state.zeta, state.tau_sq, state.omega = 0.9, 0.005, 0.9
        trace = np.empty((sweeps, S, T))
        root = RngStream(20).child(mode)
        for i in range(sweeps):
            it = root.child(i)
            if mode == "chromatic":
                update_xi_chromatic(state, ctx, None, it)
            else:
                for tt in range(1, T + 1):
                    update_xi_block(state, ctx, tt, it.child(tt))
            trace[i] = state.xi
        kept = trace[sweeps // 10:]  # discard a short warm-up from the zero start
        means.append(kept.mean(axis=0))
        ses.append(batch_means_se(kept))
    z = np.abs(means[0] - means[1]) / np.sqrt(ses[0] ** 2 + ses[1] ** 2)
    elapsed = time.perf_counter() - start
    report(2, z.max() < 3.0 and elapsed < 120,
           f"max per-site |mean difference| = {z.max():.2f} MCSE over {S * T} sites (limit 3),"
           f" {elapsed:.1f}s (limit 120s)")


# ---------------------------------------------------------------- 3

def test_criterion_3_conjugate_means(report):
    start = time.perf_counter()
    data = lattice_dataset(nrow=5, ncol=5, T=6, P=1, seed=3)
    spec = ModelSpec(0, 1, knots_per_surface=(9,))
    ctx = GibbsContext(data, spec)
    state = initial_state(ctx)
    rng = np.random.default_rng(3)
    state.beta_star = [rng.normal(size=9)]
    state.xi = rng.normal(scale=0.3, size=state.xi.shape)
    state.zeta, state.omega = 0.6, 0.85
    ctx.refresh(state)
    N = 50_000
    shape_s, rate_s = sigma_sq_conditional(state, ctx, 0)
    sig = np.array([update_sigma_sq(state, ctx, 0, RngStream(30, (i,))) for i in range(N)])
    shape_t, rate_t = tau_sq_conditional(state, ctx)
    tau = np.array([update_tau_sq(state, ctx, RngStream(31, (i,))) for i in range(N)])
    err_s = abs(sig.mean() / (rate_s / (shape_s - 1)) - 1)
    err_t = abs(tau.mean() / (rate_t / (shape_t - 1)) - 1)
    elapsed = time.perf_counter() - start
    report(3, err_s < 0.02 and err_t < 0.02 and elapsed < 60,
           f"relative error of long-run mean: sigma_sq {err_s:.4f}, tau_sq {err_t:.4f} (limit 0.02),"
           f" {elapsed:.1f}s (limit 60s)")


# ---------------------------------------------------------------- 4

def test_criterion_4_prior_recovery(report):
    start = time.perf_counter()
    side, T, thin = 2, 3, 25
    empty = Dataset.from_arrays(lattice_regions(side, side), T, [], [], [], [], x=np.zeros((0, 1)),
                                adjacency=lattice_adjacency(side, side))
    spec = ModelSpec(0, 1, knots_per_surface=(3,))
    cfg = ChainConfig(iterations=5000 * thin + 1000, burn_in=1000, thin=thin, seed=4)
    dr = run_chain(empty, spec, cfg)
    pr = spec.priors
    sz = np.sqrt(pr.sigma_zeta_sq)
    targets = {
        "delta_0": (dr.delta[:, 0], stats.norm(0, np.sqrt(pr.sigma_delta_sq))),
        "tau_sq": (dr.tau_sq, stats.invgamma(pr.a_tau, scale=pr.b_tau)),
        "zeta": (dr.zeta, stats.truncnorm(-1 / sz, 1 / sz, scale=sz)),
        "omega": (dr.omega, stats.beta(pr.a_omega, pr.b_omega)),
    }
    pvals = {k: stats.kstest(v, d.cdf).pvalue for k, (v, d) in targets.items()}
    elapsed = time.perf_counter() - start
    ok = dr.num_draws == 5000 and min(pvals.values()) > 0.01 and elapsed < 300
    report(4, ok, "KS p-values " + ", ".join(f"{k} {p:.3f}" for k, p in pvals.items())
           + f" on {dr.num_draws} draws (limit 0.01), {elapsed:.1f}s (limit 300s)")


# ---------------------------------------------------------------- 5

def edge_mask(side: int) -> np.ndarray:
    idx = np.arange(side * side)
    r, c = idx // side, idx % side
    return (r == 0) | (c == 0) | (r == side - 1) | (c == side - 1)


@pytest.mark.slow
def test_criterion_5_full_design_replications(report):
    start = time.perf_counter()
    design = SimDesign(seed=5)
    res = run_replications(design, ChainConfig(iterations=10_000, burn_in=5_000, seed=500), n_reps=20)
    edge = edge_mask(design.grid_side)
    mean_bias = float(np.mean(np.abs(res.bias)))
    mse_edge, mse_inner = float(res.mse[edge].mean()), float(res.mse[~edge].mean())
    elapsed = time.perf_counter() - start
    ok = (res.failures == 0 and len(res.estimates) == 20 and mean_bias < 0.15
          and mse_edge >= mse_inner and elapsed < 45 * 60)
    report(5, ok, f"mean |bias| {mean_bias:.4f} (limit 0.15), edge MSE {mse_edge:.4f} vs interior"
           f" {mse_inner:.4f}, {res.failures} failures, {elapsed / 60:.1f} min (limit 45 min)")


# ---------------------------------------------------------------- 6

@pytest.mark.slow
def test_criterion_6_knot_insensitivity(report):
    start = time.perf_counter()
    design = SimDesign(seed=6)
    surface = generate_gpp_surface(design, RngStream(6).child("surface"))
    data, _ = generate_dataset(design, RngStream(6).child("rep", 0), surface=surface)
    cfg = ChainConfig(iterations=10_000, burn_in=5_000, seed=600)
    est, se = {}, {}
    for k in (4, 5, 7):
        dr = run_chain(data, fit_spec(design, knot_side=k), cfg)
        est[k] = dr.kriged(0).mean(axis=0)
        se[k] = batch_means_se(dr.kriged(0))
    lines, ok = [], True
    for a, b in ((4, 5), (4, 7), (5, 7)):
        diff = float(np.mean(np.abs(est[a] - est[b])))
        band = float(np.mean(np.sqrt(se[a] ** 2 + se[b] ** 2)))
        ok &= diff < 2 * band
        lines.append(f"{a}x{a} vs {b}x{b}: {diff:.4f} vs 2x band {2 * band:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    report(6, ok, "; ".join(lines) + f", {elapsed / 60:.1f} min (limit 10 min)")


# ---------------------------------------------------------------- 7

def chromatic_sweep_seconds(nrow: int, ncol: int, T: int = 12, repeats: int = 300) -> float:
    data = lattice_dataset(nrow=nrow, ncol=ncol, T=T, P=0, seed=7)
    ctx = GibbsContext(data, ModelSpec(0, 0))
    state = initial_state(ctx)
    state.tau_sq, state.zeta = 0.1, 0.5
    rng = RngStream(7)
    update_xi_chromatic(state, ctx, None, rng)  # compile and warm caches
    times = []
    for i in range(repeats):
        t0 = time.perf_counter()
        update_xi_chromatic(state, ctx, None, rng.child(i))
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_criterion_7_sweep_scaling(report):
    start = time.perf_counter()
    t1 = chromatic_sweep_seconds(10, 10)
    t2 = chromatic_sweep_seconds(10, 20)
    t3 = chromatic_sweep_seconds(20, 20)
    r1, r2 = t2 / t1, t3 / t2
    elapsed = time.perf_counter() - start
    report(7, r1 <= 2.5 and r2 <= 2.5 and elapsed < 600,
           f"median sweep {t1 * 1e3:.3f} / {t2 * 1e3:.3f} / {t3 * 1e3:.3f} ms, growth {r1:.2f}x and"
           f" {r2:.2f}x per doubling (limit 2.5x), {elapsed:.1f}s")


# ---------------------------------------------------------------- 8

def morans_i_double_loop(x, W):
    n = len(x)
    xbar = sum(x) / n
    num = 0.0
    wsum = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i, j] * (x[i] - xbar) * (x[j] - xbar)
            wsum += W[i, j]
    den = sum((xi - xbar) ** 2 for xi in x)
    return n / wsum * num / den


def test_criterion_8_morans_i(report):
    W = adjacency_matrix(lattice_adjacency(5, 5), 25)
    Wd = W.toarray()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=25)
        worst = max(worst, abs(morans_i(x, W) - morans_i_double_loop(x, Wd)))
    report(8, worst <= 1e-12, f"max |fast - double loop| = {worst:.2e} over 50 vectors (limit 1e-12)")


# ---------------------------------------------------------------- 9

def test_criterion_9_sum_to_zero(report):
    rng = np.random.default_rng(9)
    data = lattice_dataset(nrow=4, ncol=5, T=6, P=2, Q=1, seed=9)
    spec = ModelSpec(1, 2, knots_per_surface=(4, 6))
    ops = build_operators(data, spec, thetas=[0.3, 0.7])
    worst_sum = worst_nu = 0.0
    for _ in range(50):
        st = LatentState.zeros(spec, data)
        st.delta = rng.normal(size=2)
        st.beta_star = [rng.normal(size=4), rng.normal(size=6)]
        st.xi = rng.normal(loc=rng.normal(scale=5), scale=rng.uniform(0.1, 3), size=st.xi.shape)
        before = linear_predictor(st, data, ops)
        apply_sum_to_zero(st)
        worst_sum = max(worst_sum, abs(st.xi.sum()))
        worst_nu = max(worst_nu, float(np.max(np.abs(linear_predictor(st, data, ops) - before))))
    report(9, worst_sum <= 1e-12 and worst_nu <= 1e-12,
           f"max |sum xi| = {worst_sum:.2e}, max |nu change| = {worst_nu:.2e} over 50 states (limit 1e-12)")


# ---------------------------------------------------------------- 10

def tree_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_10_cli_determinism(report, tmp_path, capsys):
    small = ["--set", "grid_side=6", "--set", "horizon=8", "--seed", "10"]
    chain = ["--set", "iterations=400", "--set", "burn_in=150", "--set", "knots_per_surface=4"]
    runs = {}
    for rep in ("a", "b"):
        sim = tmp_path / rep / "sim"
        assert main(["simulate", "--out", str(sim)] + small) == 0
        for workers in ("1", "4"):
            out = tmp_path / rep / f"fit{workers}"
            assert main(["fit", "--data", str(sim), "--out", str(out), "--seed", "10",
                         "--workers", workers] + chain) == 0
        runs[rep] = {k: tree_bytes(tmp_path / rep / k) for k in ("sim", "fit1", "fit4")}
    capsys.readouterr()
    same = {k: runs["a"][k] == runs["b"][k] for k in ("sim", "fit1", "fit4")}
    same_manifest = all(runs["a"][k]["manifest.txt"] == runs["b"][k]["manifest.txt"] for k in same)
    draws_agree = ({k: v for k, v in runs["a"]["fit1"].items() if k.startswith("draws/")}
                   == {k: v for k, v in runs["a"]["fit4"].items() if k.startswith("draws/")})
    ok = all(same.values()) and same_manifest and draws_agree
    report(10, ok, "byte-identical reruns: " + ", ".join(f"{k} {v}" for k, v in same.items())
           + f"; serial and 4-worker draw archives identical: {draws_agree}")
