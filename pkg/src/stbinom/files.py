"""CSV readers and writers for counts, centroids, adjacency and draw archives.

Counts files have the header ``region_id,t,y,n`` followed by any ``z*``
(global) and then ``x*`` (spatially varying) covariate columns. A row with
empty ``y`` and ``n`` carries covariates for an unobserved cell. Floats are
written with ``repr`` so every value survives a write/read round trip.
"""

from __future__ import annotations

import csv
import hashlib
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import CellCovariates, Dataset, DatasetError, Region, validate_dataset


class InputFormatError(ValueError):
    """A malformed input file; the message names the file and line."""


@dataclass(frozen=True, eq=False)
class CountsTable:
    """Typed rows of a counts file, before region ids are resolved."""

    region_ids: list[str]
    t: np.ndarray
    y: np.ndarray
    n: np.ndarray
    z: np.ndarray
    x: np.ndarray
    lines: np.ndarray
    observed: np.ndarray
    z_names: list[str]
    x_names: list[str]

    @property
    def num_global(self) -> int:
        return self.z.shape[1]

    @property
    def num_varying(self) -> int:
        return self.x.shape[1]


def _read_rows(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputFormatError(f"{path}: empty file") from None
        rows = [(reader.line_num, row) for row in reader if any(c.strip() for c in row)]
    return path, header, rows


def _int_field(text: str, name: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise InputFormatError(f"{where}: {name} must be an integer, got {text!r}") from None


def _float_field(text: str, name: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputFormatError(f"{where}: {name} must be a number, got {text!r}") from None


def parse_counts_csv(path) -> CountsTable:
    """Read a counts file into typed columns.

    Only the file structure is checked here; count constraints such as
    ``y <= n`` are left to :func:`validate_dataset`.
    """
    path, header, rows = _read_rows(path)
    required = ["region_id", "t", "y", "n"]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputFormatError(f"{path}: missing columns {missing}")
    if header[:4] != required:
        raise InputFormatError(f"{path}: header must start with {','.join(required)}")
    extra = header[4:]
    z_names = [c for c in extra if c.startswith("z")]
    x_names = [c for c in extra if c.startswith("x")]
    if extra != z_names + x_names:
        raise InputFormatError(f"{path}: covariate columns must be z* columns followed by x* columns")
    ids, t, y, n, z, x, lines, observed = [], [], [], [], [], [], [], []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if len(row) != len(header):
            raise InputFormatError(f"{where}: expected {len(header)} fields, got {len(row)}")
        row = [c.strip() for c in row]
        ids.append(row[0])
        t.append(_int_field(row[1], "t", where))
        if row[2] == "" and row[3] == "":
            observed.append(False)
            y.append(0)
            n.append(0)
        else:
            observed.append(True)
            y.append(_int_field(row[2], "y", where))
            n.append(_int_field(row[3], "n", where))
        z.append([_float_field(v, nm, where) for v, nm in zip(row[4:4 + len(z_names)], z_names)])
        x.append([_float_field(v, nm, where) for v, nm in zip(row[4 + len(z_names):], x_names)])
        lines.append(lineno)
    m = len(ids)
    return CountsTable(
        region_ids=ids,
        t=np.array(t, dtype=np.int64),
        y=np.array(y, dtype=np.int64),
        n=np.array(n, dtype=np.int64),
        z=np.array(z, dtype=float).reshape(m, len(z_names)),
        x=np.array(x, dtype=float).reshape(m, len(x_names)),
        lines=np.array(lines, dtype=np.int64),
        observed=np.array(observed, dtype=bool),
        z_names=z_names,
        x_names=x_names,
    )


def parse_centroids(path) -> list[Region]:
    path, header, rows = _read_rows(path)
    if header[:3] != ["region_id", "coord1", "coord2"] or len(header) != 3:
        raise InputFormatError(f"{path}: header must be region_id,coord1,coord2")
    regions, seen = [], set()
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if len(row) != 3:
            raise InputFormatError(f"{where}: expected 3 fields, got {len(row)}")
        rid = row[0].strip()
        if rid in seen:
            raise InputFormatError(f"{where}: duplicate region id {rid!r}")
        seen.add(rid)
        c = (_float_field(row[1].strip(), "coord1", where), _float_field(row[2].strip(), "coord2", where))
        if not np.all(np.isfinite(c)):
            raise InputFormatError(f"{where}: non-finite centroid")
        regions.append(Region(rid, c))
    return regions


def parse_adjacency(path, region_ids) -> np.ndarray:
    """Directed index pairs of the symmetrized, deduplicated relation.

    Self-pairs are dropped with a warning; unknown ids are errors.
    """
    path, header, rows = _read_rows(path)
    if header != ["region_id_a", "region_id_b"]:
        raise InputFormatError(f"{path}: header must be region_id_a,region_id_b")
    index = {rid: i for i, rid in enumerate(region_ids)}
    edges = set()
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if len(row) != 2:
            raise InputFormatError(f"{where}: expected 2 fields, got {len(row)}")
        a, b = row[0].strip(), row[1].strip()
        for rid in (a, b):
            if rid not in index:
                raise InputFormatError(f"{where}: unknown region id {rid!r}")
        if a == b:
            warnings.warn(f"{where}: self-adjacency of {a!r} dropped", stacklevel=2)
            continue
        i, j = index[a], index[b]
        edges.add((i, j))
        edges.add((j, i))
    return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)


_CELL = re.compile(r"\((\d+),(\d+)\)")


def assemble_dataset(table: CountsTable, regions, adjacency, horizon: int | None = None) -> Dataset:
    """Resolve region ids, split off unobserved rows and validate.

    Validation failures about a specific cell gain the file line number.
    """
    index = {r.id: i for i, r in enumerate(regions)}
    unknown = [(ln, rid) for ln, rid in zip(table.lines, table.region_ids) if rid not in index]
    if unknown:
        ln, rid = unknown[0]
        raise InputFormatError(f"line {ln}: unknown region id {rid!r}"
                               + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))
    s = np.array([index[r] for r in table.region_ids], dtype=np.int64)
    if horizon is None:
        horizon = int(table.t.max()) if len(table.t) else 1
    obs = table.observed
    unobserved = None
    if not obs.all():
        unobserved = CellCovariates(s=s[~obs], t=table.t[~obs], z=table.z[~obs], x=table.x[~obs])
    data = Dataset.from_arrays(regions, horizon, s[obs], table.t[obs], table.y[obs], table.n[obs],
                               z=table.z[obs], x=table.x[obs], adjacency=adjacency,
                               unobserved=unobserved)
    try:
        return validate_dataset(data)
    except DatasetError as exc:
        line_of = {(int(a), int(b)): int(ln) for a, b, ln in zip(s, table.t, table.lines)}

        def locate(msg):
            m = _CELL.search(msg)
            if m and not msg.startswith(("asymmetric", "reflexive", "adjacency")):
                ln = line_of.get((int(m.group(1)), int(m.group(2))))
                if ln is not None:
                    return f"{msg} [line {ln}]"
            return msg

        raise DatasetError([locate(p) for p in exc.problems]) from None


def read_dataset(counts, centroids, adjacency, horizon: int | None = None) -> Dataset:
    regions = parse_centroids(centroids)
    pairs = parse_adjacency(adjacency, [r.id for r in regions])
    return assemble_dataset(parse_counts_csv(counts), regions, pairs, horizon)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_dataset(data: Dataset, directory) -> dict[str, Path]:
    """Write ``counts.csv``, ``centroids.csv`` and ``adjacency.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = [r.id for r in data.regions]
    Q, P = data.num_global, data.num_varying
    header = ["region_id", "t", "y", "n"] + [f"z{q + 1}" for q in range(Q)] + [f"x{p + 1}" for p in range(P)]
    paths = {"counts": d / "counts.csv", "centroids": d / "centroids.csv", "adjacency": d / "adjacency.csv"}
    with paths["counts"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.num_cells):
            w.writerow([ids[data.s[i]], int(data.t[i]), int(data.y[i]), int(data.n[i])]
                       + [_fmt(v) for v in data.z[i]] + [_fmt(v) for v in data.x[i]])
        u = data.unobserved
        if u is not None:
            for i in range(len(u)):
                w.writerow([ids[u.s[i]], int(u.t[i]), "", ""]
                           + [_fmt(v) for v in u.z[i]] + [_fmt(v) for v in u.x[i]])
    with paths["centroids"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "coord1", "coord2"])
        for r in data.regions:
            w.writerow([r.id, _fmt(r.centroid[0]), _fmt(r.centroid[1])])
    with paths["adjacency"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id_a", "region_id_b"])
        for a, b in data.edges():
            w.writerow([ids[a], ids[b]])
    return paths


def write_table(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def write_matrix(path, header, values) -> Path:
    values = np.asarray(values, dtype=float)
    values = values.reshape(len(values), -1)
    return write_table(path, header, values.tolist())


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    path, header, rows = _read_rows(path)
    vals = np.array([[float(v) for v in row] for _, row in rows], dtype=float)
    return header, vals.reshape(len(rows), len(header))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
