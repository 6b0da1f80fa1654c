"""CSV ingestion and serialization.

All readers share the same conventions: UTF-8, comma delimiter, a mandatory
header row, and ``#``-prefixed comment lines ignored.  Floats are written
with ``repr`` so every value reloads bit-for-bit.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    AlignmentError,
    MissingCell,
    PanelFormatError,
    RaggedTimes,
    ValidationError,
    ZeroPart,
)
from .model import PanelData
from .simplex import IlrBasis, build_basis, closure, ilr, replace_zeros
from .weights import SpatialWeights, distance_cutoff, from_adjacency

__all__ = [
    "LoadedPanel",
    "format_float",
    "load_distance_weights",
    "load_adjacency",
    "load_coordinates",
    "load_fit",
    "load_panel",
    "load_regressors",
    "read_records",
    "save_adjacency",
    "save_fit",
    "save_mc",
    "save_panel",
    "save_regressors",
]

PANEL_HEADER = ("region_id", "time", "part", "value")
REGRESSOR_HEADER = ("region_id", "time", "regressor", "component", "value")
FIT_HEADER = ("block", "coef", "estimate", "std_error", "t_stat")

_MAX_LISTED = 20


def format_float(x) -> str:
    """Shortest decimal that round-trips; NaN becomes an empty field."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _parse_float(text: str) -> float:
    return float("nan") if text.strip() == "" else float(text)


# ---------------------------------------------------------------------------
# generic reader


def read_records(path, header) -> list[tuple[int, list[str]]]:
    """Rows of a CSV with a mandatory header, as ``(line_number, fields)``.

    The header must equal ``header`` exactly (after stripping whitespace).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, 1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise PanelFormatError(f"{path}: empty file, expected header {','.join(header)}")
    rows = csv.reader([ln for _, ln in lines])
    out = []
    head = None
    bad = []
    for (lineno, _), row in zip(lines, rows):
        row = [c.strip() for c in row]
        if head is None:
            head = tuple(row)
            if head != tuple(header):
                raise PanelFormatError(
                    f"{path}:{lineno}: header {','.join(head)!r} does not match {','.join(header)!r}"
                )
            continue
        if len(row) != len(header):
            bad.append(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            continue
        out.append((lineno, row))
    if bad:
        raise PanelFormatError(f"{path}: {len(bad)} malformed record(s)", bad)
    return out


def _raise_listed(cls, message, records):
    if records:
        raise cls(f"{message} ({len(records)} record(s))", records[:_MAX_LISTED])


# ---------------------------------------------------------------------------
# time keys

_ISO_DAY = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_ISO_MONTH = re.compile(r"^\d{4}-\d{2}$")
_INT = re.compile(r"^[+-]?\d+$")
FREQUENCIES = ("auto", "integer", "annual", "monthly", "daily")


def _to_date(label: str) -> dt.date:
    if _ISO_MONTH.match(label):
        label += "-01"
    if not _ISO_DAY.match(label):
        raise ValueError(label)
    return dt.date.fromisoformat(label)


def time_keys(labels, frequency: str = "auto") -> dict[str, int]:
    """Map time labels to integer ordinals at the given frequency.

    Integer labels map to themselves.  ISO dates (``YYYY-MM-DD`` or
    ``YYYY-MM``) map to years, month counts or day ordinals; ``auto``
    picks the coarsest frequency consistent with every label.
    """
    if frequency not in FREQUENCIES:
        raise ValidationError(f"unknown frequency {frequency!r}; choose from {FREQUENCIES}")
    labels = sorted(set(labels))
    if frequency in ("auto", "integer") and all(_INT.match(s) for s in labels):
        return {s: int(s) for s in labels}
    if frequency == "integer":
        bad = [s for s in labels if not _INT.match(s)]
        raise PanelFormatError("non-integer time labels", [f"time {s!r}" for s in bad[:_MAX_LISTED]])
    dates = {}
    bad = []
    for s in labels:
        try:
            dates[s] = _to_date(s)
        except ValueError:
            bad.append(f"time {s!r}: not an integer or ISO date")
    _raise_listed(PanelFormatError, "unparseable time labels", bad)
    if frequency == "auto":
        ds = list(dates.values())
        if len({(d.month, d.day) for d in ds}) == 1:
            frequency = "annual"
        elif len({d.day for d in ds}) == 1:
            frequency = "monthly"
        else:
            frequency = "daily"
    if frequency == "annual":
        return {s: d.year for s, d in dates.items()}
    if frequency == "monthly":
        return {s: d.year * 12 + d.month - 1 for s, d in dates.items()}
    return {s: d.toordinal() for s, d in dates.items()}


def _check_equidistant(keys: dict[str, int]) -> list[str]:
    """Labels ordered by key, after verifying equal spacing."""
    order = sorted(keys, key=keys.get)
    vals = [keys[s] for s in order]
    if len(set(vals)) != len(vals):
        dup = [s for s in order if vals.count(keys[s]) > 1]
        raise RaggedTimes("distinct time labels map to the same period", [f"time {s!r}" for s in dup])
    steps = np.diff(vals)
    if len(steps) and np.any(steps != steps[0]):
        recs = [
            f"gap {order[i]!r} -> {order[i + 1]!r} is {steps[i]} periods, expected {steps[0]}"
            for i in np.flatnonzero(steps != steps[0])
        ]
        raise RaggedTimes("time points are not equidistant", recs)
    return order


# ---------------------------------------------------------------------------
# panels


@dataclass(frozen=True, eq=False)
class LoadedPanel:
    """A compositional panel read from disk.

    Unpacks as ``panel, basis, ids = load_panel(...)`` where ``ids`` maps
    each region id to its row in the panel.

    Attributes
    ----------
    panel : PanelData
        ilr coordinates; ``Y0`` is the earliest period.
    basis : IlrBasis
    regions, times, parts : tuple of str
        Canonical orderings (regions lexicographic, times chronological).
    shares : ndarray, shape (T + 1, n, D)
        Closed compositions, after any zero replacement.
    replaced : ndarray of bool, same shape as ``shares``
        Parts that were zero in the file and replaced.
    """

    panel: PanelData
    basis: IlrBasis
    regions: tuple
    times: tuple
    parts: tuple
    shares: np.ndarray
    replaced: np.ndarray
    frequency: str = "auto"
    ids: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", {r: i for i, r in enumerate(self.regions)})

    def __iter__(self):
        return iter((self.panel, self.basis, self.ids))

    @property
    def zero_replaced(self) -> bool:
        return bool(self.replaced.any())


def _pivot(path, header, key_cols, value_col, nonneg=True):
    """Parse records into {key tuple: (value, line)} with duplicate checks."""
    cells = {}
    bad, dups = [], []
    for lineno, row in read_records(path, header):
        key = tuple(row[c] for c in key_cols)
        if any(k == "" for k in key):
            bad.append(f"line {lineno}: empty key field in {','.join(row)}")
            continue
        try:
            val = float(row[value_col])
        except ValueError:
            bad.append(f"line {lineno}: value {row[value_col]!r} is not a number")
            continue
        if not math.isfinite(val):
            bad.append(f"line {lineno}: value {row[value_col]!r} is not finite")
            continue
        if nonneg and val < 0:
            bad.append(f"line {lineno}: value {val!r} is negative")
            continue
        if key in cells:
            dups.append(f"line {lineno}: duplicate of line {cells[key][1]} for {key}")
            continue
        cells[key] = (val, lineno)
    _raise_listed(PanelFormatError, f"{path}: invalid values", bad)
    _raise_listed(PanelFormatError, f"{path}: duplicate keys", dups)
    return cells


def load_panel(
    path,
    basis_mode: str = "balance",
    zero_policy: str = "reject",
    delta: float = 1e-6,
    frequency: str = "auto",
    parts=None,
    partition=None,
) -> LoadedPanel:
    """Read a long-format compositional panel and map it to ilr space.

    Parameters
    ----------
    path : path-like
        CSV with header ``region_id,time,part,value``.  Values may be
        shares or raw counts; every (region, time) row is closed.
    basis_mode : {"balance", "helmert", "pivot"}
    zero_policy : {"reject", "replace"}
        ``replace`` substitutes ``delta`` for zero shares and re-closes.
    frequency : {"auto", "integer", "annual", "monthly", "daily"}
        How time labels are turned into equidistant periods.
    parts : sequence of str, optional
        Part order for the basis; defaults to lexicographic.

    Raises
    ------
    MissingCell, ZeroPart, RaggedTimes, PanelFormatError
    """
    if zero_policy not in ("reject", "replace"):
        raise ValidationError(f"zero_policy must be 'reject' or 'replace', got {zero_policy!r}")
    cells = _pivot(path, PANEL_HEADER, (0, 1, 2), 3)
    regions = tuple(sorted({k[0] for k in cells}))
    found_parts = sorted({k[2] for k in cells})
    if parts is None:
        parts = tuple(found_parts)
    else:
        parts = tuple(parts)
        extra = sorted(set(found_parts) - set(parts))
        if extra:
            raise PanelFormatError(f"{path}: parts not in the declared list", [f"part {p!r}" for p in extra])
    if len(parts) < 2:
        raise PanelFormatError(f"{path}: need at least 2 parts, found {list(parts)}")
    keys = time_keys({k[1] for k in cells}, frequency)
    times = tuple(_check_equidistant(keys))
    if len(times) < 2:
        raise RaggedTimes(f"{path}: need at least 2 time points (one initial), found {len(times)}")

    missing = [
        f"missing (region_id={r!r}, time={t!r}, part={p!r})"
        for r in regions
        for t in times
        for p in parts
        if (r, t, p) not in cells
    ]
    _raise_listed(MissingCell, f"{path}: incomplete panel", missing)

    raw = np.array(
        [[[cells[(r, t, p)][0] for p in parts] for r in regions] for t in times], dtype=float
    )
    zero = raw == 0
    if zero.all(axis=-1).any():
        recs = [
            f"(region_id={regions[u]!r}, time={times[t]!r}) has all parts zero"
            for t, u in np.argwhere(zero.all(axis=-1))
        ]
        raise ZeroPart(f"{path}: compositions without any positive part", recs)
    if zero.any() and zero_policy == "reject":
        recs = [
            f"line {cells[(regions[u], times[t], parts[d])][1]}: zero part "
            f"(region_id={regions[u]!r}, time={times[t]!r}, part={parts[d]!r})"
            for t, u, d in np.argwhere(zero)
        ]
        raise ZeroPart(f"{path}: zero parts (use zero_policy='replace')", recs)
    if zero.any():
        shares, replaced = replace_zeros(raw, delta)
    else:
        shares, replaced = closure(raw), zero

    basis = build_basis(len(parts), basis_mode, partition)
    coords = ilr(shares, basis)
    panel = PanelData(coords[1:], coords[0])
    return LoadedPanel(panel, basis, regions, times, parts, shares, replaced, frequency)


def save_panel(path, shares, regions, times, parts) -> None:
    """Write closed compositions ``shares[t, unit, part]`` in long format."""
    shares = np.asarray(shares, dtype=float)
    if shares.shape != (len(times), len(regions), len(parts)):
        raise ValidationError(
            f"shares shape {shares.shape} does not match "
            f"({len(times)} times, {len(regions)} regions, {len(parts)} parts)"
        )
    order = sorted(range(len(regions)), key=lambda i: regions[i])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for u in order:
            for t, tl in enumerate(times):
                for d, pl in enumerate(parts):
                    w.writerow((regions[u], tl, pl, format_float(shares[t, u, d])))


# ---------------------------------------------------------------------------
# regressors


def load_regressors(path, loaded: LoadedPanel, intercept: bool = False):
    """Regressor panels aligned to ``loaded``'s regions and response times.

    Parameters
    ----------
    path : path-like or None
        CSV ``region_id,time,regressor,component,value``; ``component`` is
        1..p or ``*`` to broadcast a scalar to every coordinate.  Rows at
        the initial period are ignored.  ``None`` means no file.
    intercept : bool
        Prepend an all-ones regressor named ``intercept``.

    Returns
    -------
    X : ndarray, shape (T, q, n, p)
    names : tuple of str
    """
    T, n, p = loaded.panel.Y.shape
    resp_times = loaded.times[1:]
    names, blocks = [], []
    if intercept:
        names.append("intercept")
        blocks.append(np.ones((T, n, p)))
    if path is not None:
        cells = _pivot(path, REGRESSOR_HEADER, (0, 1, 2, 3), 4, nonneg=False)
        keys = time_keys({k[1] for k in cells} | set(loaded.times), loaded.frequency)
        canon = {keys[t]: t for t in loaded.times}
        regions = set(loaded.regions)
        bad = []
        grid = {}
        for (r, t, g, c), (val, lineno) in cells.items():
            if r not in regions:
                bad.append(f"line {lineno}: region_id {r!r} is not in the panel")
                continue
            tl = canon.get(keys[t])
            if tl is None:
                bad.append(f"line {lineno}: time {t!r} is not a panel period")
                continue
            if tl == loaded.times[0]:
                continue
            if c == "*":
                comps = range(p)
            elif _INT.match(c) and 1 <= int(c) <= p:
                comps = [int(c) - 1]
            else:
                bad.append(f"line {lineno}: component {c!r} must be 1..{p} or *")
                continue
            for j in comps:
                if (r, tl, g, j) in grid:
                    bad.append(f"line {lineno}: duplicate value for ({r!r}, {tl!r}, {g!r}, component {j + 1})")
                grid[(r, tl, g, j)] = val
        _raise_listed(AlignmentError, f"{path}: records do not align with the panel", bad)
        regs = sorted({k[2] for k in grid})
        if "intercept" in regs and intercept:
            raise AlignmentError(f"{path}: regressor named 'intercept' clashes with --intercept")
        missing = [
            f"missing (region_id={r!r}, time={t!r}, regressor={g!r}, component={j + 1})"
            for g in regs
            for r in loaded.regions
            for t in resp_times
            for j in range(p)
            if (r, t, g, j) not in grid
        ]
        _raise_listed(MissingCell, f"{path}: incomplete regressor panel", missing)
        for g in regs:
            names.append(g)
            blocks.append(
                np.array([[[grid[(r, t, g, j)] for j in range(p)] for r in loaded.regions] for t in resp_times])
            )
    X = np.stack(blocks, axis=1) if blocks else np.zeros((T, 0, n, p))
    return X, tuple(names)


def save_regressors(path, X, names, regions, times) -> None:
    """Write ``X[t, i, unit, j]`` (response periods only) in long format."""
    X = np.asarray(X, dtype=float)
    T, q, n, p = X.shape
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGRESSOR_HEADER)
        for u in sorted(range(n), key=lambda i: regions[i]):
            for t in range(T):
                for i in range(q):
                    if names[i] == "intercept":
                        continue
                    for j in range(p):
                        w.writerow((regions[u], times[t], names[i], j + 1, format_float(X[t, i, u, j])))


# ---------------------------------------------------------------------------
# spatial structure


def load_adjacency(path, regions=None, n: int | None = None) -> SpatialWeights:
    """Binary symmetric weights from an ``i,j`` pair list.

    With ``regions`` the entries are region ids and are mapped through the
    panel's ordering; otherwise they are 0-based integer indices.
    """
    recs = read_records(path, ("i", "j"))
    pairs, bad = [], []
    if regions is not None:
        index = {r: k for k, r in enumerate(regions)}
        for lineno, (a, b) in recs:
            unknown = [x for x in (a, b) if x not in index]
            if unknown:
                bad.append(f"line {lineno}: region_id {unknown[0]!r} is not in the panel")
            else:
                pairs.append((index[a], index[b]))
        _raise_listed(AlignmentError, f"{path}: adjacency does not align with the panel", bad)
        n = len(regions)
    else:
        for lineno, (a, b) in recs:
            if not (_INT.match(a) and _INT.match(b)):
                bad.append(f"line {lineno}: ({a!r}, {b!r}) are not integer indices")
            else:
                pairs.append((int(a), int(b)))
        _raise_listed(PanelFormatError, f"{path}: malformed adjacency", bad)
    return from_adjacency(pairs, n)


def save_adjacency(path, w: SpatialWeights, regions=None) -> None:
    """Write the directed edges of ``w`` as ``i,j`` rows (ids or indices)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("i", "j"))
        for i, j, _ in w.edges():
            out.writerow((regions[i], regions[j]) if regions is not None else (i, j))


def load_coordinates(path, regions=None) -> tuple[tuple, np.ndarray]:
    """Planar coordinates from ``id,x,y``; reordered to ``regions`` if given."""
    coords, bad = {}, []
    for lineno, (uid, x, y) in read_records(path, ("id", "x", "y")):
        try:
            xy = (float(x), float(y))
        except ValueError:
            bad.append(f"line {lineno}: coordinates ({x!r}, {y!r}) are not numbers")
            continue
        if uid in coords:
            bad.append(f"line {lineno}: duplicate id {uid!r}")
            continue
        coords[uid] = xy
    _raise_listed(PanelFormatError, f"{path}: malformed coordinates", bad)
    if regions is None:
        ids = tuple(sorted(coords))
    else:
        ids = tuple(regions)
        missing = [f"region_id {r!r} has no coordinates" for r in ids if r not in coords]
        extra = [f"id {r!r} is not in the panel" for r in sorted(set(coords) - set(ids))]
        _raise_listed(AlignmentError, f"{path}: coordinates do not align with the panel", missing + extra)
    return ids, np.array([coords[r] for r in ids], dtype=float).reshape(len(ids), 2)


def load_distance_weights(path, radius: float, regions=None) -> SpatialWeights:
    _, xy = load_coordinates(path, regions)
    return distance_cutoff(xy, radius)


# ---------------------------------------------------------------------------
# fits and studies


def save_fit(fit, path) -> None:
    """Write the coefficient table ``block,coef,estimate,std_error,t_stat``.

    Comment lines carry the log-likelihood and convergence flag.  Missing
    standard errors (restricted or unavailable) are written as empty fields.
    """
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# loglik={format_float(fit.loglik)} form={fit.loglik_form} converged={fit.converged}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_HEADER)
        for block, coef, est, se, t in fit.table():
            w.writerow((block, coef, format_float(est), format_float(se), format_float(t)))


def load_fit(path) -> list[tuple[str, str, float, float, float]]:
    """Rows written by :func:`save_fit`, floats parsed exactly (NaN for empty)."""
    return [
        (b, c, _parse_float(e), _parse_float(s), _parse_float(t))
        for _, (b, c, e, s, t) in read_records(path, FIT_HEADER)
    ]


def save_mc(res, path, manifest: dict | None = None) -> Path:
    """Write the long RMSE table to ``path`` and a JSON run manifest beside it.

    Returns the manifest path (``<path stem>.manifest.json``).
    """
    import platform

    import pandas as pd
    import scipy

    from . import __version__
    from .montecarlo import summarize

    path = Path(path)
    table = summarize(res)
    table.to_csv(path, index=False, lineterminator="\n")
    cfg = res.config
    info = {
        "seed": cfg.seed,
        "preset": cfg.preset,
        "grid_sides": list(cfg.grid_sides),
        "horizons": list(cfg.horizons),
        "replications": cfg.replications,
        "burn_in": cfg.burn_in,
        "params": {
            "beta": cfg.params.B.tolist(),
            "psi": cfg.params.Psi.tolist(),
            "pi": cfg.params.Pi.tolist(),
            "sigma2": cfg.params.sigma2,
        },
        "exclusion_rate": res.exclusion_rate(),
        "failures": {f"{c.side}x{c.side}/T={c.T}": c.errors for c in res.cells if c.errors},
        "wall_time_seconds": res.wall_time,
        "versions": {
            "compostar": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }
    info.update(manifest or {})
    man = path.with_name(path.stem + ".manifest.json")
    man.write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    return man

