"""Keyed random streams and the samplers used by the Gibbs engine."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import ndtr, ndtri
from scipy.stats import truncnorm

from ._kernels import pg_sum_exact

PG_EXACT_MAX = 50


def _key_part(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


@dataclass(frozen=True)
class RngStream:
    """A counter-style random stream identified by ``(seed, key)``.

    Streams never share state: ``RngStream(7, (0, 12, "xi")).generator()``
    yields the same draws no matter what was drawn elsewhere or in which
    order work is scheduled.
    """

    seed: int
    key: tuple[int, ...] = ()

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(_key_part(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def pg_mean(b, c):
    """E[PG(b, c)] = b / (2c) tanh(c / 2), with the limit b / 4 at c = 0."""
    b = np.asarray(b, dtype=float)
    h = 0.5 * np.abs(np.asarray(c, dtype=float))
    small = h < 1e-4
    hs = np.where(small, 1.0, h)
    ratio = np.where(small, 1.0 - h * h / 3.0, np.tanh(hs) / hs)
    return 0.25 * b * ratio


def pg_variance(b, c):
    """Var[PG(b, c)] = b (sinh c - c) sech^2(c / 2) / (4 c^3); b / 24 at c = 0."""
    b = np.asarray(b, dtype=float)
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-2
    cs = np.where(small, 1.0, c)
    h = 0.5 * cs
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(h) ** 2
    # sinh(c) sech^2(c/2) = 2 tanh(c/2) avoids overflow for large c
    big = (2.0 * np.tanh(h) - cs * sech2) / (4.0 * cs ** 3)
    series = (1.0 / 6.0 + c * c / 120.0 + c ** 4 / 5040.0) * (1.0 - c * c / 4.0 + c ** 4 / 24.0) / 4.0
    return b * np.where(small, series, big)


def sample_pg(b, c, rng, exact_max: int = PG_EXACT_MAX) -> np.ndarray:
    """Draw PG(b, c) element-wise.

    Counts up to ``exact_max`` are sums of exact PG(1, c) draws; larger
    counts use a normal draw with the exact PG mean and variance.
    """
    gen = as_generator(rng)
    b = np.asarray(b)
    c = np.asarray(c, dtype=float)
    shape = np.broadcast(b, c).shape
    b = np.broadcast_to(b, shape).ravel()
    c = np.broadcast_to(c, shape).ravel()
    if np.any(b < 1) or not np.all(np.equal(np.mod(b, 1), 0)):
        raise ValueError("Polya-Gamma shape b must be a positive integer")
    if not np.all(np.isfinite(c)):
        raise ValueError("Polya-Gamma tilt c must be finite")
    b = b.astype(np.int64)
    out = np.empty(len(b))
    exact = b <= exact_max
    if exact.any():
        tmp = np.empty(int(exact.sum()))
        pg_sum_exact(gen, b[exact], c[exact], tmp)
        out[exact] = tmp
    approx = ~exact
    if approx.any():
        m = pg_mean(b[approx], c[approx])
        sd = np.sqrt(pg_variance(b[approx], c[approx]))
        out[approx] = np.maximum(m + sd * gen.standard_normal(int(approx.sum())), 1e-12 * m)
    return out.reshape(shape)


def sample_mvn_prec(rhs, precision, rng) -> np.ndarray:
    """Draw from N(Q^{-1} rhs, Q^{-1}) with a single Cholesky factorization."""
    gen = as_generator(rng)
    Q = np.atleast_2d(np.asarray(precision, dtype=float))
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    if Q.shape != (len(rhs), len(rhs)):
        raise ValueError("precision and rhs dimensions disagree")
    if len(rhs) == 0:
        return np.zeros(0)
    L = np.linalg.cholesky(Q)
    mean = sla.cho_solve((L, True), rhs)
    z = gen.standard_normal(len(rhs))
    return mean + sla.solve_triangular(L.T, z, lower=False)


def sample_truncnorm(mu: float, sigma_sq: float, lo: float, hi: float, rng) -> float:
    """Exact draw from N(mu, sigma_sq) restricted to (lo, hi) by inverse CDF."""
    if not lo < hi:
        raise ValueError(f"degenerate truncation interval ({lo}, {hi})")
    if sigma_sq <= 0:
        raise ValueError("sigma_sq must be positive")
    gen = as_generator(rng)
    sd = float(np.sqrt(sigma_sq))
    a, b = (lo - mu) / sd, (hi - mu) / sd
    u = gen.random()
    # work in the lower tail, where ndtr keeps relative precision
    flip = a > 0
    if flip:
        a, b = -b, -a
    pa, pb = ndtr(a), ndtr(b)
    if pb - pa > 0:
        z = float(ndtri(pa + u * (pb - pa)))
    else:  # both bounds beyond double precision of the CDF
        z = float(truncnorm.ppf(u, a, b))
    x = mu + sd * (-z if flip else z)
    # rounding can land exactly on a bound far in the tails
    return float(np.clip(x, np.nextafter(lo, hi), np.nextafter(hi, lo)))


def sample_invgamma(shape: float, rate: float, rng) -> float:
    """Draw X with density proportional to x^(-shape-1) exp(-rate / x)."""
    if shape <= 0 or rate <= 0:
        raise ValueError("inverse gamma shape and rate must be positive")
    return float(rate / as_generator(rng).standard_gamma(shape))
