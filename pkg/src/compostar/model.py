r"""Model algebra for the spatiotemporal multivariate autoregression

.. math::

    Y_t = \sum_i X_{t,i} \circ \beta_i + W Y_t \Psi + Y_{t-1} \Pi + E_t ,

where every matrix is ``n x p`` (``p = D - 1`` ilr coordinates), the slope
vector :math:`\beta_i` scales the columns of :math:`X_{t,i}`, and the
innovations are i.i.d. with variance :math:`\sigma^2`.

In vec form the spatial term is :math:`(\Psi^\top \otimes W)\,\mathrm{vec}(Y_t)`.
Nothing here materialises that ``np x np`` Kronecker product except the
sparse LU used to invert the filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    NonFiniteInput,
    NonFiniteLogDet,
    ShapeMismatch,
    SolveFailed,
    Unstable,
    ValidationError,
)
from .weights import SpatialWeights, as_matrix

__all__ = [
    "ModelParams",
    "PanelData",
    "SpatialFilter",
    "StabilityReport",
    "apply_filter",
    "dynamic_stability",
    "log_det_filter",
    "param_names",
    "regression_mean",
    "residuals",
    "solve_filter",
    "spatial_lag",
    "stability_check",
]

DEFAULT_MARGIN = 1e-6


def _matrix(a, name, shape=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if shape is not None and a.shape != shape:
        raise ShapeMismatch(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def param_names(q: int, p: int, intercept: bool = False) -> list[str]:
    """Coefficient labels in the order of :meth:`ModelParams.theta`.

    Regression rows are numbered from 0 when the first regressor is the
    intercept and from 1 otherwise; component indices are 1-based.
    """
    first = 0 if intercept else 1
    names = [f"beta_{i + first},{j + 1}" for i in range(q) for j in range(p)]
    names += [f"psi_{j + 1},{k + 1}" for j in range(p) for k in range(p)]
    names += [f"pi_{j + 1},{k + 1}" for j in range(p) for k in range(p)]
    names.append("sigma2")
    return names


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters ``(B, Psi, Pi, sigma2)``.

    ``B`` is ``q x p`` with row ``i`` holding the slopes of regressor ``i``;
    ``Psi`` and ``Pi`` are ``p x p``.  ``sigma2 = 0`` is accepted so that
    noiseless panels can be generated, but likelihoods need it positive.
    """

    B: np.ndarray
    Psi: np.ndarray
    Pi: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        Psi = _matrix(self.Psi, "Psi")
        p = Psi.shape[0]
        if Psi.shape != (p, p) or p < 1:
            raise ShapeMismatch(f"Psi must be square with p >= 1, got {Psi.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.size == 0:
            B = np.zeros((0, p))
        object.__setattr__(self, "Psi", Psi)
        object.__setattr__(self, "Pi", _matrix(self.Pi, "Pi", (p, p)))
        object.__setattr__(self, "B", _matrix(B, "B", (B.shape[0] if B.ndim == 2 else -1, p)))
        s2 = float(self.sigma2)
        if not (np.isfinite(s2) and s2 >= 0):
            raise ValidationError(f"sigma2 must be finite and >= 0, got {self.sigma2}")
        object.__setattr__(self, "sigma2", s2)

    @property
    def p(self) -> int:
        return self.Psi.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[0]

    def theta(self) -> np.ndarray:
        """Flat parameter vector: B, Psi, Pi (each row-major), then sigma2."""
        return np.concatenate([self.B.ravel(), self.Psi.ravel(), self.Pi.ravel(), [self.sigma2]])

    @classmethod
    def from_theta(cls, theta, q: int, p: int) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        k = q * p + 2 * p * p + 1
        if theta.shape != (k,):
            raise ShapeMismatch(f"theta must have length {k}, got {theta.shape}")
        B = theta[: q * p].reshape(q, p)
        Psi = theta[q * p : q * p + p * p].reshape(p, p)
        Pi = theta[q * p + p * p : q * p + 2 * p * p].reshape(p, p)
        return cls(B, Psi, Pi, theta[-1])

    def replace(self, **changes) -> "ModelParams":
        kw = dict(B=self.B, Psi=self.Psi, Pi=self.Pi, sigma2=self.sigma2)
        kw.update(changes)
        return ModelParams(**kw)


@dataclass(frozen=True, eq=False)
class PanelData:
    """Responses ``Y`` (T, n, p), initial condition ``Y0`` (n, p) and
    regressors ``X`` (T, q, n, p)."""

    Y: np.ndarray
    Y0: np.ndarray
    X: np.ndarray | None = None
    regressor_names: tuple = field(default=())

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.ndim != 3:
            raise ShapeMismatch(f"Y must have shape (T, n, p), got {Y.shape}")
        T, n, p = Y.shape
        if T < 1 or n < 1 or p < 1:
            raise ShapeMismatch(f"need T, n, p >= 1, got {Y.shape}")
        Y0 = np.array(self.Y0, dtype=float)
        if Y0.shape != (n, p):
            raise ShapeMismatch(f"Y0 must have shape {(n, p)}, got {Y0.shape}")
        X = np.zeros((T, 0, n, p)) if self.X is None else np.array(self.X, dtype=float)
        if X.ndim != 4 or X.shape[0] != T or X.shape[2:] != (n, p):
            raise ShapeMismatch(f"X must have shape (T, q, n, p) = ({T}, q, {n}, {p}), got {X.shape}")
        for name, arr, lead in (("Y", Y, 1), ("Y0", Y0[None], 0), ("X", X, 1)):
            bad = ~np.isfinite(arr)
            if bad.any():
                if arr.ndim == 4:
                    bad = bad.any(axis=1)
                cells = np.argwhere(bad.any(axis=-1))[:10]
                where = ", ".join(f"(unit {u}, time {t + lead})" for t, u in cells)
                raise NonFiniteInput(f"{name} has non-finite values at {where}")
        names = tuple(self.regressor_names) or tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeMismatch(f"{len(names)} regressor names for {X.shape[1]} regressors")
        for a in (Y, Y0, X):
            a.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Y0", Y0)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "regressor_names", names)

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.Y.shape[2]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def has_intercept(self) -> bool:
        return bool(self.regressor_names) and self.regressor_names[0] == "intercept"

    @property
    def lagged(self) -> np.ndarray:
        """``Y_{t-1}`` for t = 1..T, shape (T, n, p)."""
        return np.concatenate([self.Y0[None], self.Y[:-1]], axis=0)

    def select_regressors(self, order) -> "PanelData":
        """Panel with regressors reordered/subset by index."""
        order = list(order)
        return PanelData(self.Y, self.Y0, self.X[:, order], tuple(self.regressor_names[i] for i in order))


def spatial_lag(W, Y: np.ndarray) -> np.ndarray:
    """``W @ Y`` for ``Y`` of shape (n, p) or (T, n, p)."""
    M = as_matrix(W)
    Y = np.asarray(Y, dtype=float)
    if Y.shape[-2] != M.shape[0]:
        raise ShapeMismatch(f"W is {M.shape[0]}x{M.shape[0]} but Y has {Y.shape[-2]} units")
    if Y.ndim == 2:
        return np.asarray(M @ Y)
    T, n, p = Y.shape
    flat = Y.transpose(1, 0, 2).reshape(n, T * p)
    return np.asarray(M @ flat).reshape(n, T, p).transpose(1, 0, 2)


def regression_mean(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``sum_i X_{t,i} * beta_i`` with ``beta_i`` scaling columns; (T, n, p)."""
    return np.einsum("tqnp,qp->tnp", X, B)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    spectral_radius: float
    psi_spectral_radius: float
    w_spectral_radius: float
    psi_norm1: float
    w_norm_inf: float
    margin: float

    @property
    def norm_bound(self) -> float:
        """``||Psi^T kron W||_inf = ||Psi||_1 ||W||_inf``; a cheap sufficient bound."""
        return self.psi_norm1 * self.w_norm_inf

    @property
    def norm_bound_ok(self) -> bool:
        return self.norm_bound < 1.0

    def __bool__(self) -> bool:
        return self.stable


def _w_spectral_radius(W) -> float:
    if isinstance(W, SpatialWeights):
        return W.spectral_radius
    M = as_matrix(W)
    M = M.toarray() if sp.issparse(M) else M
    return float(np.max(np.abs(np.linalg.eigvals(M)), initial=0.0))


def _w_norm_inf(W) -> float:
    if isinstance(W, SpatialWeights):
        return W.norm_inf
    M = as_matrix(W)
    return float(np.max(abs(M).sum(axis=1), initial=0.0))


def stability_check(Psi, W, margin: float = DEFAULT_MARGIN) -> StabilityReport:
    """Check that ``I - Psi^T kron W`` is safely invertible.

    Stable means ``rho(Psi) * rho(W) < 1 - margin``; the spectral radius of
    a Kronecker product is the product of spectral radii.
    """
    Psi = np.asarray(Psi, dtype=float)
    rho_psi = float(np.max(np.abs(np.linalg.eigvals(Psi)), initial=0.0)) if Psi.size else 0.0
    rho_w = _w_spectral_radius(W)
    rho = rho_psi * rho_w
    return StabilityReport(
        stable=bool(rho < 1.0 - margin),
        spectral_radius=rho,
        psi_spectral_radius=rho_psi,
        w_spectral_radius=rho_w,
        psi_norm1=float(np.max(np.abs(Psi).sum(axis=0), initial=0.0)),
        w_norm_inf=_w_norm_inf(W),
        margin=margin,
    )


def dynamic_stability(Psi, Pi, W) -> float:
    """Spectral radius of the one-step transition ``Y_{t-1} -> Y_t``.

    In vec form the transition is ``S^{-1} (Pi^T kron I_n)``.  When ``W``
    is diagonalisable with eigenvalue ``nu`` the operator decouples into
    ``p x p`` blocks ``(I - nu Psi^T)^{-1} Pi^T``, so the radius is the
    largest eigenvalue modulus over those blocks.  A value >= 1 means the
    process explodes even though ``S`` itself may be invertible.  Falls
    back to the dense ``np x np`` operator if ``W`` has no eigenvalues.
    """
    Psi = np.asarray(Psi, dtype=float)
    Pi = np.asarray(Pi, dtype=float)
    p = Psi.shape[0]
    ev = W.eigenvalues if isinstance(W, SpatialWeights) else None
    if ev is None:
        f = SpatialFilter(W, Psi, margin=0.0)
        op = np.linalg.solve(f.dense(), np.kron(Pi.T, np.eye(f.n)))
        return float(np.max(np.abs(np.linalg.eigvals(op)), initial=0.0))
    rho = 0.0
    for nu in np.unique(np.round(ev, 12)):
        block = np.linalg.solve(np.eye(p) - nu * Psi.T, Pi.T)
        rho = max(rho, float(np.max(np.abs(np.linalg.eigvals(block)))))
    return rho


class SpatialFilter:
    """The operator ``S = I_np - Psi^T kron W`` acting on ``n x p`` matrices.

    Eigenvalues of ``W`` are taken from the :class:`SpatialWeights` cache
    (computed once per weight matrix); eigenvalues of ``Psi`` and the LU
    factorisation are computed on demand and kept.
    """

    def __init__(self, W, Psi, margin: float = DEFAULT_MARGIN):
        self.weights = W
        self.W = as_matrix(W)
        self.Psi = np.asarray(Psi, dtype=float)
        self.n = self.W.shape[0]
        self.p = self.Psi.shape[0]
        if self.Psi.shape != (self.p, self.p):
            raise ShapeMismatch(f"Psi must be square, got {self.Psi.shape}")
        self.margin = margin
        if isinstance(W, SpatialWeights):
            self.w_eigenvalues = W.eigenvalues
        else:
            M = self.W.toarray() if sp.issparse(self.W) else self.W
            try:
                self.w_eigenvalues = np.linalg.eigvals(M).astype(complex)
            except np.linalg.LinAlgError:
                self.w_eigenvalues = None
        self.psi_eigenvalues = np.linalg.eigvals(self.Psi).astype(complex)
        self._lu = None

    def stability(self) -> StabilityReport:
        return stability_check(self.Psi, self.weights, self.margin)

    def _require_stable(self):
        rep = self.stability()
        if not rep.stable:
            raise Unstable(
                f"spectral radius of Psi^T kron W is {rep.spectral_radius:.6g} "
                f">= 1 - margin ({1 - self.margin:.6g})"
            )

    def apply(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-2:] != (self.n, self.p):
            raise ShapeMismatch(f"expected (..., {self.n}, {self.p}), got {Y.shape}")
        return Y - spatial_lag(self.W, Y) @ self.Psi

    def dense(self) -> np.ndarray:
        M = self.W.toarray() if sp.issparse(self.W) else self.W
        return np.eye(self.n * self.p) - np.kron(self.Psi.T, M)

    def _factor(self):
        if self._lu is None:
            self._require_stable()
            Ws = sp.csc_array(self.W)
            S = sp.identity(self.n * self.p, format="csc") - sp.kron(sp.csc_array(self.Psi.T), Ws, format="csc")
            try:
                self._lu = spla.splu(sp.csc_matrix(S))
            except RuntimeError as exc:
                raise SolveFailed(f"LU factorisation of the spatial filter failed: {exc}") from exc
        return self._lu

    def solve(self, R, rtol: float = 1e-10) -> np.ndarray:
        """Solve ``apply(Y) = R`` for ``Y``; ``R`` is (n, p) or (T, n, p)."""
        R = np.asarray(R, dtype=float)
        if R.shape[-2:] != (self.n, self.p):
            raise ShapeMismatch(f"expected (..., {self.n}, {self.p}), got {R.shape}")
        lu = self._factor()
        batch = R.reshape(-1, self.n, self.p)
        # vec() is column-major: column k of Y occupies rows k*n..(k+1)*n
        rhs = batch.transpose(2, 1, 0).reshape(self.n * self.p, -1)
        sol = lu.solve(rhs)
        Y = sol.reshape(self.p, self.n, -1).transpose(2, 1, 0).reshape(R.shape)
        if not np.all(np.isfinite(Y)):
            raise SolveFailed("spatial filter solve produced non-finite values")
        resid = self.apply(Y) - R
        scale = max(float(np.max(np.abs(R), initial=0.0)), 1.0)
        if np.max(np.abs(resid), initial=0.0) > rtol * scale * max(1.0, np.sqrt(self.n * self.p)):
            raise SolveFailed("spatial filter solve did not reach the residual tolerance")
        return Y

    def log_det(self, method: str = "auto") -> float:
        """``log|I - Psi^T kron W|``.

        The eigen route sums ``log(1 - mu_i nu_j)`` over eigenvalues ``mu`` of
        Psi and ``nu`` of W.  Conjugate pairs cancel in the imaginary part,
        so the real part is the log-determinant.  ``method="dense"`` uses an
        LU-based determinant of the materialised matrix.
        """
        self._require_stable()
        if method not in ("auto", "eigen", "dense"):
            raise ValidationError(f"unknown log-det method {method!r}")
        if method != "dense" and self.w_eigenvalues is not None:
            terms = 1.0 - np.multiply.outer(self.psi_eigenvalues, self.w_eigenvalues)
            val = float(np.sum(np.log(terms)).real)
        elif method == "eigen":
            raise NonFiniteLogDet("eigenvalues of W are unavailable")
        else:
            sign, val = np.linalg.slogdet(self.dense())
            if sign <= 0:
                raise NonFiniteLogDet(f"determinant of the spatial filter has sign {sign}")
            val = float(val)
        if not np.isfinite(val):
            raise NonFiniteLogDet("log-determinant is not finite")
        return val


def apply_filter(f: SpatialFilter, Y) -> np.ndarray:
    """``Y - W Y Psi``, i.e. ``S vec(Y)`` reshaped."""
    return f.apply(Y)


def solve_filter(f: SpatialFilter, R) -> np.ndarray:
    return f.solve(R)


def log_det_filter(f: SpatialFilter, method: str = "auto") -> float:
    return f.log_det(method)


def residuals(params: ModelParams, data: PanelData, W) -> np.ndarray:
    """Innovations ``E_t`` implied by ``params``; shape (T, n, p)."""
    if params.p != data.p:
        raise ShapeMismatch(f"params have p={params.p}, data has p={data.p}")
    if params.q != data.q:
        raise ShapeMismatch(f"params have q={params.q} regressors, data has q={data.q}")
    M = as_matrix(W)
    if M.shape != (data.n, data.n):
        raise ShapeMismatch(f"W is {M.shape}, data has n={data.n}")
    return (
        data.Y
        - regression_mean(data.X, params.B)
        - spatial_lag(M, data.Y) @ params.Psi
        - data.lagged @ params.Pi
    )

