"""Compiled inner loops: exact Polya-Gamma draws and the chromatic xi sweep."""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# prefer OpenMP or the built-in work queue; older system TBB builds only emit warnings
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_TRUNC = 0.64
_PI2_8 = math.pi * math.pi / 8.0
_LOG_PI_2 = math.log(0.5 * math.pi)


@nb.njit(cache=True)
def _norm_logcdf(x):
    return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))


@nb.njit(cache=True)
def _a_coef(n, x):
    # n-th term of the alternating series for the J*(1, 0) density
    k = (n + 0.5) * math.pi
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    return math.exp(-1.5 * (_LOG_PI_2 + math.log(x)) + math.log(k) - 2.0 * (n + 0.5) ** 2 / x)


@nb.njit(cache=True)
def _mass_texpon(z):
    t = _TRUNC
    fz = _PI2_8 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _norm_logcdf(b)
    xa = x0 + z + _norm_logcdf(a)
    qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@nb.njit(cache=True)
def _rtigauss(rng, z):
    # inverse Gaussian with mean 1/z truncated to (0, _TRUNC)
    r = _TRUNC
    x = r + 1.0
    if z == 0.0 or 1.0 / z > r:
        alpha = 0.0
        u = 1.0
        while u > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / r:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = r / (1.0 + r * e1) ** 2
            alpha = math.exp(-0.5 * z * z * x)
            u = rng.random()
    else:
        mu = 1.0 / z
        while x > r:
            y = rng.standard_normal() ** 2
            x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) ** 2)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@nb.njit(cache=True)
def pg1(rng, c):
    """One exact PG(1, c) draw by the alternating-series rejection method."""
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    while True:
        if rng.random() < _mass_texpon(z):
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _rtigauss(rng, z)
        s = _a_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _a_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _a_coef(n, x)
                if y > s:
                    break


@nb.njit(cache=True)
def pg_sum_exact(rng, b, c, out):
    """out[i] = sum of b[i] independent PG(1, c[i]) draws."""
    for i in range(len(out)):
        acc = 0.0
        for _ in range(b[i]):
            acc += pg1(rng, c[i])
        out[i] = acc


def _sweep_body(xi, t0, t1, indptr, indices, deg, order, starts, prec_data, lin_data,
                z, zeta, omega, tau_sq):
    T = xi.shape[1]
    K = len(starts) - 1
    c = 1.0 + zeta * zeta
    for t in range(t0, t1):
        last = t == T - 1
        for k in range(K):
            for idx in nb.prange(starts[k], starts[k + 1]):
                s = order[idx]
                w_now = 0.0
                w_prev = 0.0
                w_next = 0.0
                for q in range(indptr[s], indptr[s + 1]):
                    j = indices[q]
                    w_now += xi[j, t]
                    if t > 0:
                        w_prev += xi[j, t - 1]
                    if not last:
                        w_next += xi[j, t + 1]
                prev = xi[s, t - 1] if t > 0 else 0.0
                d = deg[s]
                if last:
                    prec = prec_data[s, t] + d / tau_sq
                    lin = lin_data[s, t] + (omega * w_now + zeta * d * prev
                                            - zeta * omega * w_prev) / tau_sq
                else:
                    nxt = xi[s, t + 1]
                    prec = prec_data[s, t] + d * c / tau_sq
                    lin = lin_data[s, t] + (omega * c * w_now + zeta * d * (prev + nxt)
                                            - zeta * omega * (w_prev + w_next)) / tau_sq
                xi[s, t] = lin / prec + z[s, t] / math.sqrt(prec)


xi_sweep_serial = nb.njit(cache=True)(_sweep_body)
xi_sweep_parallel = nb.njit(cache=True, parallel=True)(_sweep_body)


def color_layout(W, colors):
    """Flattened CSR neighbour lists and colour order for :func:`xi_sweep`."""
    order = np.concatenate(colors).astype(np.int64) if colors else np.zeros(0, np.int64)
    starts = np.zeros(len(colors) + 1, dtype=np.int64)
    starts[1:] = np.cumsum([len(c) for c in colors])
    return W.indptr.astype(np.int64), W.indices.astype(np.int64), order, starts


def xi_sweep(xi, t0, t1, layout, deg, prec_data, lin_data, z, zeta, omega, tau_sq, workers=1):
    """Chromatic single-site Gibbs over times t0..t1-1 (0-based), in place.

    Each site (s, t) consumes the pre-drawn standard normal ``z[s, t]``, so
    the result does not depend on how a colour class is split over threads.
    """
    indptr, indices, order, starts = layout
    if workers > 1:
        nb.set_num_threads(max(1, min(workers, nb.config.NUMBA_NUM_THREADS)))
        fn = xi_sweep_parallel
    else:
        fn = xi_sweep_serial
    fn(xi, t0, t1, indptr, indices, deg, order, starts, prec_data, lin_data, z,
       float(zeta), float(omega), float(tau_sq))
