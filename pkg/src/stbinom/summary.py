"""Posterior summaries: local trend slopes, credible intervals and the
draw archive layout shared by the ``fit`` and ``summarize`` commands.

Archive layout (one directory)::

    trace_<name>.csv      one column per scalar parameter draw (delta_0, tau_sq, ...)
    kriged_<p>.csv        draws x regions of the kriged coefficient surface p
    slopes.csv            draws x regions of local trend slopes
    nu_summary.csv        region_id, t, posterior mean and variance of nu
    acceptance.csv        Metropolis-Hastings acceptance rates
    parameters.csv        scalar parameter names in table order
    regions.csv           region ids in column order
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .files import read_matrix, write_matrix, write_table
from .gibbs import PosteriorDraws
from .model import Dataset

SCALARS = ("tau_sq", "omega", "zeta")


class SummaryError(ValueError):
    pass


def county_trend(nu_draws, times) -> np.ndarray:
    """OLS slope of each draw's nu over ``times``.

    ``nu_draws`` has time on its last axis, e.g. (G, S, T); the result drops
    that axis.
    """
    times = np.asarray(times, dtype=float).ravel()
    nu = np.asarray(nu_draws, dtype=float)
    if nu.shape[-1] != len(times):
        raise SummaryError(f"last axis has length {nu.shape[-1]} but there are {len(times)} times")
    tc = times - times.mean()
    sxx = float(tc @ tc)
    if len(times) < 2 or sxx == 0.0:
        raise SummaryError("trend slopes need at least two distinct time values")
    return nu @ (tc / sxx)


@dataclass(frozen=True)
class IntervalSummary:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def significant(self) -> np.ndarray:
        """True where the interval excludes zero."""
        return (self.lower > 0) | (self.upper < 0)


def interval_summary(draws, level: float = 0.95) -> IntervalSummary:
    """Mean, sd and equal-tailed ``level`` interval along axis 0."""
    if not 0 < level < 1:
        raise SummaryError("level must lie in (0, 1)")
    d = np.asarray(draws, dtype=float)
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(d, [alpha, 1.0 - alpha], axis=0)
    sd = d.std(axis=0, ddof=1) if len(d) > 1 else np.zeros_like(d[0])
    return IntervalSummary(d.mean(axis=0), sd, lo, hi)


@dataclass(frozen=True, eq=False)
class DrawTable:
    """The retained draws a summary needs, from memory or from an archive."""

    region_ids: list[str]
    scalars: dict[str, np.ndarray]
    kriged: list[np.ndarray]
    slopes: np.ndarray | None
    acceptance: dict[str, float] = field(default_factory=dict)

    @property
    def num_draws(self) -> int:
        return len(next(iter(self.scalars.values())))

    @classmethod
    def from_draws(cls, draws: PosteriorDraws, data: Dataset) -> "DrawTable":
        scalars = {}
        for q in range(draws.delta.shape[1]):
            scalars[f"delta_{q}"] = draws.delta[:, q]
        for p in range(draws.theta.shape[1]):
            scalars[f"sigma_sq_{p + 1}"] = draws.sigma_sq[:, p]
            scalars[f"theta_{p + 1}"] = draws.theta[:, p]
        for name in SCALARS:
            scalars[name] = getattr(draws, name)
        acc = {f"theta_{p + 1}": float(a) for p, a in enumerate(draws.acceptance["theta"])}
        acc["omega"] = float(draws.acceptance["omega"])
        kriged = [draws.kriged(p) for p in range(draws.btilde.shape[1])]
        return cls([r.id for r in data.regions], scalars, kriged, draws.slopes, acc)

    def write(self, directory) -> Path:
        d = Path(directory)
        write_table(d / "regions.csv", ["region_id"], [[r] for r in self.region_ids])
        write_table(d / "parameters.csv", ["parameter"], [[k] for k in self.scalars])
        for name, v in self.scalars.items():
            write_matrix(d / f"trace_{name}.csv", [name], v)
        for p, k in enumerate(self.kriged, start=1):
            write_matrix(d / f"kriged_{p}.csv", self.region_ids, k)
        if self.slopes is not None:
            write_matrix(d / "slopes.csv", self.region_ids, self.slopes)
        write_table(d / "acceptance.csv", ["parameter", "rate"],
                    [[k, float(v)] for k, v in self.acceptance.items()])
        return d

    @classmethod
    def read(cls, directory) -> "DrawTable":
        d = Path(directory)
        if not (d / "regions.csv").exists():
            raise SummaryError(f"{d} is not a draw archive (regions.csv missing)")
        ids = [r[0] for r in _rows(d / "regions.csv")]
        scalars = {}
        for (name,) in _rows(d / "parameters.csv"):
            scalars[name] = read_matrix(d / f"trace_{name}.csv")[1][:, 0]
        kriged = []
        p = 1
        while (d / f"kriged_{p}.csv").exists():
            kriged.append(read_matrix(d / f"kriged_{p}.csv")[1])
            p += 1
        slopes = read_matrix(d / "slopes.csv")[1] if (d / "slopes.csv").exists() else None
        acc = {k: float(v) for k, v in _rows(d / "acceptance.csv")} if (d / "acceptance.csv").exists() else {}
        return cls(ids, scalars, kriged, slopes, acc)


def _rows(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)][1:]


SUMMARY_HEADER = [
    "region_id",
    "trend_mean", "trend_sd", "trend_lower", "trend_upper", "trend_significant",
    "slope_mean", "slope_sd", "slope_lower", "slope_upper", "slope_significant",
]
GLOBAL_HEADER = ["parameter", "mean", "sd", "lower", "upper", "significant", "acceptance"]


def _flag(b) -> str:
    return "true" if bool(b) else "false"


def summarize(table: DrawTable, level: float = 0.95, min_draws: int = 100):
    """Per-region and global summary rows.

    Regional rows cover the first kriged coefficient surface and the local
    trend slope; either block is blank when unavailable.
    """
    G = table.num_draws
    if G < min_draws:
        raise SummaryError(f"summaries need at least {min_draws} retained draws, got {G}")
    S = len(table.region_ids)
    blank = ["", "", "", "", ""]

    def block(draws):
        if draws is None:
            return [blank] * S
        s = interval_summary(draws, level)
        return [[float(s.mean[i]), float(s.sd[i]), float(s.lower[i]), float(s.upper[i]),
                 _flag(s.significant[i])] for i in range(S)]

    trend = block(table.kriged[0] if table.kriged else None)
    slope = block(table.slopes)
    regional = [[rid] + trend[i] + slope[i] for i, rid in enumerate(table.region_ids)]
    glob = []
    for name, v in table.scalars.items():
        s = interval_summary(v, level)
        acc = table.acceptance.get(name)
        glob.append([name, float(s.mean), float(s.sd), float(s.lower), float(s.upper),
                     _flag(s.significant), "" if acc is None else float(acc)])
    return regional, glob


def write_summaries(table: DrawTable, directory, level: float = 0.95, min_draws: int = 100):
    regional, glob = summarize(table, level, min_draws)
    d = Path(directory)
    return (write_table(d / "summary.csv", SUMMARY_HEADER, regional),
            write_table(d / "global.csv", GLOBAL_HEADER, glob))


def batch_means_se(draws, num_batches: int = 50) -> np.ndarray:
    """Monte Carlo standard error of the mean along axis 0 by batch means."""
    d = np.asarray(draws, dtype=float)
    G = len(d)
    b = min(num_batches, G)
    if b < 2:
        raise SummaryError("batch means need at least two draws")
    size = G // b
    means = d[: b * size].reshape(b, size, *d.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)
