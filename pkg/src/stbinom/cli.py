"""Command-line entry point: simulate, fit, summarize, diagnose, replicate.

Every command writes into an output directory (``--out``, else the
``STBINOM_OUTPUT_DIR`` environment variable, else ``./stbinom-output``) and
finishes with a ``manifest.txt`` listing the seed, the configuration hash,
library versions and SHA-256 digests of inputs and outputs. Nothing in the
outputs depends on the clock, so reruns are byte-identical.

Failures print one JSON line ``{"error": <code>, "message": ...}`` on
stderr, then any detail lines, and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import warnings
from pathlib import Path

import numba
import numpy as np
import scipy
import sklearn

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .files import (
    InputFormatError,
    file_digest,
    read_dataset,
    write_dataset,
    write_matrix,
    write_table,
)
from .gibbs import ChainError, run_chain
from .model import Dataset, DatasetError, ModelSpec
from .rng import RngStream
from .sim import fit_spec, generate_dataset, run_replications
from .spatial import adjacency_matrix, morans_i
from .summary import DrawTable, SummaryError, batch_means_se, write_summaries

log = logging.getLogger("stbinom")

OUTPUT_ENV = "STBINOM_OUTPUT_DIR"

EXIT_CODES = {
    "bad_input": 3,
    "invalid_dataset": 3,
    "bad_config": 4,
    "chain_failed": 5,
    "summary_failed": 6,
    "internal": 1,
}


class CliError(Exception):
    def __init__(self, code: str, message: str, details=()):
        super().__init__(message)
        self.code = code
        self.details = list(details)


def _output_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or "stbinom-output"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _overrides(args) -> dict[str, str]:
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "workers", None) is not None:
        values["workers"] = str(args.workers)
    return values


def _versions() -> list[tuple[str, str]]:
    return [
        ("stbinom", __version__),
        ("python", platform.python_version()),
        ("numpy", np.__version__),
        ("scipy", scipy.__version__),
        ("numba", numba.__version__),
        ("scikit-learn", sklearn.__version__),
    ]


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict[str, Path], outputs) -> Path:
    """Manifest with the seed, config hash, versions and file digests.

    The resolved configuration is embedded verbatim, so the manifest alone
    (plus the inputs it fingerprints) reproduces the run.
    """
    lines = [f"command = {command}", f"seed = {cfg.chain.seed}", f"config_sha256 = {cfg.digest()}"]
    lines += [f"version.{k} = {v}" for k, v in _versions()]
    lines += [f"input.{k} = {Path(p).name} sha256:{file_digest(p)}" for k, p in sorted(inputs.items())]
    for p in sorted(Path(o) for o in outputs):
        lines.append(f"output.{p.relative_to(out).as_posix()} = sha256:{file_digest(p)}")
    lines += [f"config.{ln}" for ln in cfg.lines()]
    (out / "config.txt").write_text(cfg.text(), encoding="utf-8")
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _files_under(out: Path) -> list[Path]:
    skip = {"manifest.txt", "config.txt"}
    return sorted(p for p in out.rglob("*") if p.is_file() and p.name not in skip)


def _load_data(args) -> tuple[Dataset, dict[str, Path]]:
    if args.data:
        d = Path(args.data)
        paths = {"counts": d / "counts.csv", "centroids": d / "centroids.csv", "adjacency": d / "adjacency.csv"}
    else:
        if not (args.counts and args.centroids and args.adjacency):
            raise CliError("bad_input", "give --data DIR or all of --counts, --centroids, --adjacency")
        paths = {"counts": Path(args.counts), "centroids": Path(args.centroids),
                 "adjacency": Path(args.adjacency)}
    for p in paths.values():
        if not p.exists():
            raise CliError("bad_input", f"input file not found: {p}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = read_dataset(paths["counts"], paths["centroids"], paths["adjacency"])
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return data, paths


def build_fit_spec(data: Dataset, cfg: RunConfig) -> ModelSpec:
    """Model dimensions from the data, knots from the fit options."""
    P = data.num_varying
    opts = cfg.fit
    if opts.knot_grid_side > 0 and P:
        c = data.coords
        side = opts.knot_grid_side
        g0 = np.linspace(c[:, 0].min(), c[:, 0].max(), side)
        g1 = np.linspace(c[:, 1].min(), c[:, 1].max(), side)
        a, b = np.meshgrid(g0, g1, indexing="ij")
        knots = np.column_stack([a.ravel(), b.ravel()])
        return ModelSpec(data.num_global, P, priors=cfg.priors, knot_locations=(knots,) * P)
    counts = tuple(opts.knots_per_surface)
    if len(counts) == 1:
        counts = counts * P
    if len(counts) != P:
        raise ConfigError(f"knots_per_surface lists {len(counts)} values for {P} varying coefficients")
    return ModelSpec(data.num_global, P, knots_per_surface=counts, priors=cfg.priors,
                     knot_seed=opts.knot_seed)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _output_dir(args)
    design = cfg.design
    data, truth = generate_dataset(design, RngStream(design.seed))
    write_dataset(data, out)
    ids = [r.id for r in data.regions]
    write_table(out / "truth_surface.csv", ["region_id", "surface"],
                [[rid, float(v)] for rid, v in zip(ids, truth.surface)])
    write_table(out / "truth_xi.csv", ["region_id", "t", "xi"],
                [[ids[s], t + 1, float(truth.xi[s, t])]
                 for s in range(data.num_regions) for t in range(data.horizon)])
    write_table(out / "truth_knots.csv", ["coord1", "coord2", "parent"],
                [[float(k[0]), float(k[1]), float(v)] for k, v in zip(truth.knots, truth.parent)])
    write_manifest(out, "simulate", cfg, {}, _files_under(out))
    print(f"simulated {data.num_regions} regions x {data.horizon} periods into {out}")
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    data, inputs = _load_data(args)
    spec = build_fit_spec(data, cfg)
    out = _output_dir(args)
    every = max(1, cfg.chain.iterations // 20)

    def progress(i, state):
        if (i + 1) % every == 0:
            log.info("iteration %d/%d tau_sq=%.4g omega=%.3f zeta=%.3f",
                     i + 1, cfg.chain.iterations, state.tau_sq, state.omega, state.zeta)

    draws = run_chain(data, spec, cfg.chain, callback=progress)
    table = DrawTable.from_draws(draws, data)
    table.write(out / "draws")
    ids = [r.id for r in data.regions]
    write_table(out / "draws" / "nu_summary.csv", ["region_id", "t", "nu_mean", "nu_var"],
                [[ids[s], int(t), float(m), float(v)]
                 for s, t, m, v in zip(data.s, data.t, draws.nu_mean, draws.nu_var)])
    for p, kr in enumerate(spec.knot_locations or [], start=1):
        write_matrix(out / "draws" / f"knots_{p}.csv", ["coord1", "coord2"], kr)
    if draws.num_draws >= cfg.fit.min_draws:
        write_summaries(table, out, cfg.fit.level, cfg.fit.min_draws)
    else:
        print(f"warning: {draws.num_draws} retained draws; summaries need {cfg.fit.min_draws}",
              file=sys.stderr)
    write_manifest(out, "fit", cfg, inputs, _files_under(out))
    print(f"fit complete: {draws.num_draws} retained draws in {out}")
    return 0


def cmd_summarize(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    level = cfg.fit.level if args.level is None else args.level
    table = DrawTable.read(args.draws)
    out = _output_dir(args)
    paths = write_summaries(table, out, level, cfg.fit.min_draws)
    inputs = {"draws_regions": Path(args.draws) / "regions.csv"}
    write_manifest(out, "summarize", cfg, inputs, paths)
    print(f"wrote {paths[0]} and {paths[1]}")
    return 0


def _pooled_logit(data: Dataset) -> np.ndarray:
    y = np.bincount(data.s, weights=data.y, minlength=data.num_regions)
    n = np.bincount(data.s, weights=data.n, minlength=data.num_regions)
    return np.log((y + 0.5) / (n - y + 0.5))


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _output_dir(args)
    rows, inputs, outputs = [], {}, []

    def moran(label, values, W):
        try:
            rows.append([label, morans_i(values, W), ""])
        except ValueError as exc:
            print(f"warning: Moran's I for {label} undefined: {exc}", file=sys.stderr)
            rows.append([label, "", f"undefined: {exc}"])

    W = None
    if args.data or args.counts:
        data, inputs = _load_data(args)
        W = adjacency_matrix(data.adjacency, data.num_regions)
        moran("moran_i_empirical_logit", _pooled_logit(data), W)
    if args.fit:
        table = DrawTable.read(Path(args.fit) / "draws")
        inputs["fit_regions"] = Path(args.fit) / "draws" / "regions.csv"
        names = list(table.scalars)
        traces = np.column_stack([table.scalars[k] for k in names])
        outputs.append(write_matrix(out / "traces.csv", names, traces))
        if table.num_draws >= 2:
            se = batch_means_se(traces)
            for k, m, s in zip(names, traces.mean(axis=0), se):
                rows.append([f"mean_{k}", float(m), f"mcse={float(s)!r}"])
        for k, v in table.acceptance.items():
            rows.append([f"acceptance_{k}", float(v), ""])
            print(f"acceptance {k}: {v:.3f}")
        if W is not None and table.num_draws:
            if table.slopes is not None:
                moran("moran_i_mean_slope", table.slopes.mean(axis=0), W)
            if table.kriged:
                moran("moran_i_mean_trend", table.kriged[0].mean(axis=0), W)
    if not (args.data or args.counts or args.fit):
        raise CliError("bad_input", "diagnose needs --data/--counts inputs, --fit, or both")
    for r in rows:
        if r[1] != "":
            print(f"{r[0]}: {r[1]:.6g}")
    outputs.append(write_table(out / "diagnostics.csv", ["statistic", "value", "note"], rows))
    write_manifest(out, "diagnose", cfg, inputs, outputs)
    return 0


def cmd_replicate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _output_dir(args)
    design = cfg.design
    n_reps = design.n_reps if args.reps is None else args.reps
    spec = fit_spec(design, args.knot_side, cfg.priors)

    def progress(r, est):
        log.info("replication %d done", r + 1)

    summary = run_replications(design, cfg.chain, n_reps=n_reps, knot_side=args.knot_side,
                               priors=cfg.priors, progress=progress)
    if len(summary.estimates) == 0:
        raise CliError("chain_failed", f"all {n_reps} replications failed")
    ids = [f"r{i:04d}" for i in range(design.num_regions)]
    path = write_table(out / "replication.csv",
                       ["region_id", "truth", "mean_estimate", "bias", "mse"],
                       [[rid, float(a), float(b), float(c), float(d)] for rid, a, b, c, d in
                        zip(ids, summary.truth, summary.mean_estimate, summary.bias, summary.mse)])
    est = write_matrix(out / "estimates.csv", ids, summary.estimates)
    stats = write_table(out / "replication_summary.csv", ["statistic", "value"], [
        ["replications", len(summary.estimates)],
        ["failures", summary.failures],
        ["knots", len(spec.knot_locations[0])],
        ["mean_abs_bias", float(np.mean(np.abs(summary.bias)))],
        ["mean_mse", float(np.mean(summary.mse))],
    ])
    write_manifest(out, "replicate", cfg, {}, [path, est, stats])
    print(f"mean |bias| {np.mean(np.abs(summary.bias)):.4f} over {len(summary.estimates)} "
          f"replications ({summary.failures} failed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stbinom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./stbinom-output)")
        if seed:
            p.add_argument("--seed", type=int, help="random seed for data generation and the chain")

    def data_inputs(p):
        p.add_argument("--data", help="directory holding counts.csv, centroids.csv and adjacency.csv")
        p.add_argument("--counts")
        p.add_argument("--centroids")
        p.add_argument("--adjacency")

    p = sub.add_parser("simulate", help="generate a synthetic data set with its truth")
    common(p)
    p.add_argument("--design", dest="config", help="alias of --config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler and write draws and summaries")
    common(p)
    data_inputs(p)
    p.add_argument("--workers", type=int, help="parallel workers for the colour-class updates")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="summary tables from a draw archive")
    common(p, seed=False)
    p.add_argument("--draws", required=True, help="draw archive directory written by fit")
    p.add_argument("--level", type=float, help="credible level (default from config, 0.95)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("diagnose", help="Moran's I, traces and acceptance rates")
    common(p, seed=False)
    data_inputs(p)
    p.add_argument("--fit", help="output directory of a previous fit")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("replicate", help="replicated simulate-and-fit study of trend-surface recovery")
    common(p)
    p.add_argument("--design", dest="config", help="alias of --config")
    p.add_argument("--reps", type=int, help="number of replications (default n_reps)")
    p.add_argument("--knot-side", type=int, help="side of the fitted knot grid (default knot_side)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_replicate)
    return parser


def _fail(code: str, message: str, details=()) -> int:
    first = " ".join(str(message).split())
    print(json.dumps({"error": code, "message": first}), file=sys.stderr)
    for d in details:
        print(f"  {d}", file=sys.stderr)
    return EXIT_CODES.get(code, 1)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, str(exc), exc.details)
    except DatasetError as exc:
        more = len(exc.problems) - 1
        head = exc.problems[0] + (f" (and {more} more)" if more else "")
        return _fail("invalid_dataset", head, exc.problems)
    except InputFormatError as exc:
        return _fail("bad_input", str(exc))
    except ConfigError as exc:
        return _fail("bad_config", str(exc))
    except ChainError as exc:
        return _fail("chain_failed", str(exc))
    except SummaryError as exc:
        return _fail("summary_failed", str(exc))
    except FileNotFoundError as exc:
        return _fail("bad_input", f"file not found: {exc.filename}")
    except Exception as exc:  # last-resort report, still one parsable line
        log.debug("unhandled error", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
