"""Data-generating process in ilr space.

Every simulation draws from a counter-based Philox stream derived from
``(seed, *stream)``, so replication ``r`` of cell ``c`` can be generated
independently of any other replication and of execution order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeMismatch, ValidationError
from .model import ModelParams, PanelData, SpatialFilter, dynamic_stability, regression_mean
from .simplex import IlrBasis, ilr_inv
from .weights import SpatialWeights

__all__ = [
    "ExplosiveProcessWarning",
    "SimConfig",
    "make_rng",
    "simulate",
    "simulate_compositions",
]

STATIONARY_BURN_IN = 500


class ExplosiveProcessWarning(RuntimeWarning):
    """The simulated panel has a unit-or-larger temporal root."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for the derived stream ``(seed, *stream)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation settings.

    ``params.B`` must have ``int(intercept) + n_regressors`` rows: the
    all-ones intercept first, then standard-normal regressors redrawn for
    every period.  ``noise`` is ``"gaussian"`` or ``"student_t"``; the
    latter is rescaled to variance ``sigma2`` and needs ``df > 2``.
    """

    params: ModelParams
    W: SpatialWeights
    T: int
    burn_in: int = 100
    seed: int = 0
    stream: tuple = field(default=())
    intercept: bool = False
    n_regressors: int = 0
    y0_spec: str = "zeros"
    noise: str = "gaussian"
    df: float = 5.0

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError(f"T must be >= 1, got {self.T}")
        if self.burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.y0_spec not in ("zeros", "stationary_draw"):
            raise ValidationError(f"unknown y0_spec {self.y0_spec!r}")
        if self.noise not in ("gaussian", "student_t"):
            raise ValidationError(f"unknown noise {self.noise!r}")
        if self.noise == "student_t" and not self.df > 2:
            raise ValidationError(f"student_t noise needs df > 2, got {self.df}")
        q = int(self.intercept) + self.n_regressors
        if self.params.q != q:
            raise ShapeMismatch(
                f"params.B has {self.params.q} rows but the regressor spec implies {q}"
            )

    @property
    def effective_burn_in(self) -> int:
        if self.y0_spec == "stationary_draw":
            return max(self.burn_in, STATIONARY_BURN_IN)
        return self.burn_in

    @property
    def regressor_names(self) -> tuple:
        names = ("intercept",) if self.intercept else ()
        return names + tuple(f"x{i + 1}" for i in range(self.n_regressors))


def simulate(cfg: SimConfig, return_innovations: bool = False):
    """Run the forward recursion ``Y_t = S^{-1}(X_t B + Y_{t-1} Pi + E_t)``.

    Returns
    -------
    PanelData
        The last ``T`` periods; ``Y0`` is the state right before them.
    ndarray, optional
        The innovations ``E_1..E_T`` (only with ``return_innovations``).
    """
    prm = cfg.params
    n, p = cfg.W.n, prm.p
    filt = SpatialFilter(cfg.W, prm.Psi)
    filt._require_stable()
    rho = dynamic_stability(prm.Psi, prm.Pi, cfg.W)
    if rho >= 1.0:
        warnings.warn(
            f"the transition Y_(t-1) -> Y_t has spectral radius {rho:.4g} >= 1; "
            "the simulated process is explosive",
            ExplosiveProcessWarning,
            stacklevel=2,
        )
    rng = make_rng(cfg.seed, *cfg.stream)
    total = cfg.T + cfg.effective_burn_in

    X = np.empty((total, prm.q, n, p))
    if cfg.intercept:
        X[:, 0] = 1.0
    X[:, int(cfg.intercept):] = rng.standard_normal((total, cfg.n_regressors, n, p))
    if cfg.noise == "gaussian":
        E = rng.standard_normal((total, n, p))
    else:
        E = rng.standard_t(cfg.df, (total, n, p)) * np.sqrt((cfg.df - 2) / cfg.df)
    E *= np.sqrt(prm.sigma2)

    drift = regression_mean(X, prm.B) + E
    Y = np.empty((total + 1, n, p))
    Y[0] = 0.0
    for t in range(total):
        Y[t + 1] = filt.solve(drift[t] + Y[t] @ prm.Pi)

    b = cfg.effective_burn_in
    panel = PanelData(Y[b + 1 :], Y[b], X[b:], cfg.regressor_names)
    if return_innovations:
        return panel, E[b:]
    return panel


def simulate_compositions(cfg: SimConfig, basis: IlrBasis) -> np.ndarray:
    """Simulate and map every unit back to the simplex.

    Returns an array of shape (T + 1, n, D); index 0 is the initial state.
    """
    if basis.p != cfg.params.p:
        raise ShapeMismatch(f"basis has {basis.p} coordinates, model has p={cfg.params.p}")
    panel = simulate(cfg)
    Y = np.concatenate([panel.Y0[None], panel.Y])
    return ilr_inv(Y, basis)
