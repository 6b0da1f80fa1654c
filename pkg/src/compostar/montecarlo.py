"""Monte Carlo consistency studies: simulate, fit, aggregate RMSE per cell.

Each replication draws from the stream ``(seed, side, T, r)``.  Results are
therefore identical whatever the worker count or execution order, and a
cell shared by two grids (e.g. the quick and full presets) sees the same
panels in both.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from .estimate import FitOptions, fit
from .exceptions import CompostarError, ValidationError
from .model import ModelParams, param_names
from .simulate import SimConfig, simulate
from .weights import SpatialWeights, rook_grid, row_standardize

__all__ = [
    "REFERENCE_PARAMS",
    "PRESETS",
    "STATIONARY_PARAMS",
    "CellResult",
    "McConfig",
    "McResult",
    "load_config",
    "run_study",
    "summarize",
]

# Reference design: 3-part compositions (p = 2), an intercept
# and two standard-normal regressors, unit innovation variance.
REFERENCE_PARAMS = ModelParams(
    B=[[1.0, 2.0], [-2.0, 1.0], [3.0, -2.0]],
    Psi=[[0.7, 0.2], [0.1, 0.7]],
    Pi=[[0.1, 0.1], [0.2, 0.1]],
    sigma2=1.0,
)

# With a row-standardised W the reference (Psi, Pi) pair has a temporal root
# of about 1.66 along the constant spatial mode, i.e. the process explodes.
# Halving Pi gives a root of about 0.83 and leaves everything else unchanged.
STATIONARY_PARAMS = REFERENCE_PARAMS.replace(Pi=0.5 * REFERENCE_PARAMS.Pi)

PRESETS = {
    "quick": dict(grid_sides=(4, 6), horizons=(20, 80), replications=20),
    "full": dict(grid_sides=(4, 6, 8), horizons=(20, 80, 160), replications=100),
}

GROUPS = ("beta", "psi", "pi", "sigma2")


@dataclass(frozen=True, eq=False)
class McConfig:
    grid_sides: tuple = (4, 6, 8)
    horizons: tuple = (20, 80, 160)
    replications: int = 100
    params: ModelParams = REFERENCE_PARAMS
    intercept: bool = True
    n_regressors: int = 2
    burn_in: int = 100
    seed: int = 0
    workers: int | None = None
    preset: str | None = None
    fit_options: FitOptions = field(default_factory=lambda: FitOptions(compute_se=False))

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError(f"replications must be >= 1, got {self.replications}")
        if not self.grid_sides or any(int(s) < 2 for s in self.grid_sides):
            raise ValidationError(f"grid sides must all be >= 2, got {self.grid_sides}")
        if not self.horizons or any(int(t) < 1 for t in self.horizons):
            raise ValidationError(f"horizons must all be >= 1, got {self.horizons}")
        object.__setattr__(self, "grid_sides", tuple(int(s) for s in self.grid_sides))
        object.__setattr__(self, "horizons", tuple(int(t) for t in self.horizons))
        q = int(self.intercept) + self.n_regressors
        if self.params.q != q:
            raise ValidationError(f"params.B has {self.params.q} rows, regressor spec implies {q}")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "McConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], "preset": name, **overrides})

    @property
    def names(self) -> list[str]:
        return param_names(self.params.q, self.params.p, self.intercept)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(s, t) for s in self.grid_sides for t in self.horizons]


@dataclass(eq=False)
class CellResult:
    side: int
    T: int
    estimates: np.ndarray  # (replications, k); NaN rows for excluded fits
    errors: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.side * self.side

    @property
    def ok(self) -> np.ndarray:
        return np.all(np.isfinite(self.estimates), axis=1)

    @property
    def n_fail(self) -> int:
        return int((~self.ok).sum())

    def _dev(self, truth):
        return self.estimates[self.ok] - truth

    def rmse(self, truth) -> np.ndarray:
        d = self._dev(truth)
        if len(d) == 0:
            return np.full(len(truth), np.nan)
        return np.sqrt(np.mean(d**2, axis=0))

    def bias(self, truth) -> np.ndarray:
        d = self._dev(truth)
        if len(d) == 0:
            return np.full(len(truth), np.nan)
        return np.mean(d, axis=0)

    def sd(self) -> np.ndarray:
        est = self.estimates[self.ok]
        if len(est) < 2:
            return np.full(self.estimates.shape[1], np.nan)
        return np.std(est, axis=0, ddof=1)


@dataclass(eq=False)
class McResult:
    config: McConfig
    names: list
    truth: np.ndarray
    cells: list
    wall_time: float = 0.0

    def cell(self, side: int, T: int) -> CellResult:
        for c in self.cells:
            if c.side == side and c.T == T:
                return c
        raise KeyError((side, T))

    def exclusion_rate(self) -> float:
        total = sum(len(c.estimates) for c in self.cells)
        return sum(c.n_fail for c in self.cells) / total

    def group_rmse(self, side: int, T: int, group: str) -> float:
        c = self.cell(side, T)
        r = c.rmse(self.truth)
        idx = [i for i, nm in enumerate(self.names) if _group(nm) == group]
        return float(np.mean(r[idx]))


def _group(name: str) -> str:
    return name.split("_", 1)[0] if "_" in name else name


@lru_cache(maxsize=16)
def _grid_weights(side: int) -> SpatialWeights:
    return row_standardize(rook_grid(side))


def _replicate(cfg: McConfig, side: int, T: int, r: int):
    W = _grid_weights(side)
    sim = SimConfig(
        cfg.params,
        W,
        T,
        burn_in=cfg.burn_in,
        seed=cfg.seed,
        stream=(side, T, r),
        intercept=cfg.intercept,
        n_regressors=cfg.n_regressors,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            panel = simulate(sim)
            res = fit(panel, W, cfg.fit_options)
        except (CompostarError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return None, f"r={r}: {type(exc).__name__}: {exc}"
    if not res.converged:
        return None, f"r={r}: not converged ({'; '.join(res.messages)})"
    return res.params.theta(), None


def _run_cell(args):
    cfg, side, T, reps = args
    out = []
    for r in reps:
        out.append(_replicate(cfg, side, T, r))
    return out


def run_study(cfg: McConfig) -> McResult:
    """Run every (side, T) cell of the design.

    Fits that raise or fail to converge are excluded from the RMSE and
    counted in ``CellResult.n_fail`` with a reason in ``errors``.
    """
    import time

    start = time.perf_counter()
    k = len(cfg.names)
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    # chunks of replications keep per-task overhead small while staying order-free
    chunk = max(1, cfg.replications // max(1, 2 * workers))
    tasks = []
    for side, T in cfg.cells:
        for lo in range(0, cfg.replications, chunk):
            tasks.append((cfg, side, T, range(lo, min(lo + chunk, cfg.replications))))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_cell, tasks))
    else:
        outputs = [_run_cell(t) for t in tasks]

    by_cell = {}
    for (_, side, T, reps), out in zip(tasks, outputs):
        est, errs = by_cell.setdefault((side, T), (np.full((cfg.replications, k), np.nan), []))
        for r, (theta, err) in zip(reps, out):
            if theta is not None:
                est[r] = theta
            else:
                errs.append(err)
    cells = [CellResult(s, t, *by_cell[(s, t)]) for s, t in cfg.cells]
    return McResult(cfg, cfg.names, cfg.params.theta(), cells, time.perf_counter() - start)


def summarize(res: McResult) -> pd.DataFrame:
    """Long-format table, one row per parameter per cell plus group averages.

    Columns ``param_group, param, side, n, T, rmse, bias, n_fail``; group
    rows have ``param == "average"`` and hold the arithmetic mean of the
    member rows' RMSE and bias.
    """
    rows = []
    groups = [_group(nm) for nm in res.names]
    for c in res.cells:
        rmse, bias = c.rmse(res.truth), c.bias(res.truth)
        for nm, g, r, b in zip(res.names, groups, rmse, bias):
            rows.append((g, nm, c.side, c.n, c.T, r, b, c.n_fail))
        for g in GROUPS:
            idx = [i for i, gg in enumerate(groups) if gg == g]
            if idx:
                rows.append((g, "average", c.side, c.n, c.T, float(np.mean(rmse[idx])),
                             float(np.mean(bias[idx])), c.n_fail))
    return pd.DataFrame(rows, columns=["param_group", "param", "side", "n", "T", "rmse", "bias", "n_fail"])


# ---------------------------------------------------------------------------
# config files


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip().strip('"').strip("'")


def load_config(path) -> McConfig:
    """Read a study config: a JSON object or ``key = value`` lines.

    Keys mirror :class:`McConfig` fields; ``preset`` selects a base design,
    and ``psi``, ``pi``, ``beta`` (nested lists) and ``sigma2`` override the
    data-generating parameters.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValidationError("config JSON must be an object")
    except json.JSONDecodeError:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = line.split("=", 1)
            raw[key.strip()] = _parse_value(value.strip())
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> McConfig:
    raw = dict(raw)
    known = {f.name for f in fields(McConfig)} | {"psi", "pi", "beta", "sigma2"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    prm = REFERENCE_PARAMS
    changes = {}
    for key, attr in (("psi", "Psi"), ("pi", "Pi"), ("beta", "B"), ("sigma2", "sigma2")):
        if key in raw:
            changes[attr] = raw.pop(key)
    if changes:
        prm = prm.replace(**changes)
    preset = raw.pop("preset", None)
    base = McConfig.from_preset(preset, params=prm) if preset else McConfig(params=prm)
    if "grid_sides" in raw or "horizons" in raw:
        for key in ("grid_sides", "horizons"):
            if key in raw and not isinstance(raw[key], (list, tuple)):
                raw[key] = [raw[key]]
    return replace(base, **raw)
