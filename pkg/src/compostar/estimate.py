r"""Quasi-maximum-likelihood estimation.

The Gaussian log-likelihood of ``T`` periods given ``Y_0`` is

.. math::

    \ell = -\frac{Tnp}{2}\log(2\pi\sigma^2) + T\log|I_{np} - \Psi^\top\otimes W|
           - \frac{1}{2\sigma^2}\sum_t \lVert E_t \rVert_F^2 .

For fixed ``Psi`` the filtered response ``Y_t - W Y_t Psi`` is linear in
``B`` and ``Pi`` column by column, so those (and ``sigma2``) are profiled
out by least squares and only the ``p**2`` entries of ``Psi`` are searched
numerically.  Standard errors come from a central finite-difference
Hessian of the full log-likelihood at the optimum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .exceptions import (
    NonFiniteLogDet,
    ShapeMismatch,
    SingularDesign,
    Unstable,
    ValidationError,
)
from .model import (
    ModelParams,
    PanelData,
    param_names,
    regression_mean,
    spatial_lag,
    stability_check,
)
from .weights import SpatialWeights, as_matrix

__all__ = [
    "FitOptions",
    "FitResult",
    "Likelihood",
    "concentrated_loglik",
    "fit",
    "loglik",
    "numerical_gradient",
    "numerical_hessian",
    "standard_errors",
]

LIKELIHOOD_FORMS = ("standard", "paper-verbatim")


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``gradient_tolerance`` applies to the log-likelihood divided by the
    number of scalar observations ``T n p``.  ``psi_zero``/``pi_zero``
    impose the restriction that the whole matrix is zero.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    stability_margin: float = 1e-4
    hessian_step: float = 1e-4
    optimizer: str = "quasi_newton"
    concentrate: bool = True
    psi_zero: bool = False
    pi_zero: bool = False
    likelihood: str = "standard"
    compute_se: bool = True

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.hessian_step <= 0:
            raise ValidationError("tolerances and steps must be positive")
        if self.stability_margin < 0:
            raise ValidationError("stability_margin must be >= 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.optimizer not in ("quasi_newton", "nelder_mead"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.likelihood not in LIKELIHOOD_FORMS:
            raise ValidationError(f"unknown likelihood form {self.likelihood!r}")


@dataclass(eq=False)
class FitResult:
    """Estimates with their Hessian-based uncertainty.

    ``estimates``, ``std_errors``, ``t_stats`` and ``vcov`` are aligned with
    ``names``: B, Psi, Pi (row-major), then ``sigma`` (the innovation
    standard deviation, whose standard error is obtained by the delta
    method).  Restricted or undefined entries carry NaN standard errors.
    """

    params: ModelParams
    loglik: float
    names: list
    estimates: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    vcov: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    regressor_names: tuple = ()
    free: np.ndarray | None = None
    loglik_form: str = "standard"
    messages: list = field(default_factory=list)

    def table(self) -> list[tuple[str, str, float, float, float]]:
        """Rows ``(block, coef, estimate, std_error, t_stat)``."""
        q, p = self.params.q, self.params.p
        intercept = bool(self.regressor_names) and self.regressor_names[0] == "intercept"
        rows = []
        for k, name in enumerate(self.names):
            if name.startswith("beta_"):
                block = "intercept" if intercept and k < p else "beta"
            elif name.startswith("psi_"):
                block = "psi"
            elif name.startswith("pi_"):
                block = "pi"
            else:
                block = "sigma"
            rows.append((block, name, self.estimates[k], self.std_errors[k], self.t_stats[k]))
        assert len(rows) == q * p + 2 * p * p + 1
        return rows


# ---------------------------------------------------------------------------
# numerical derivatives


def numerical_gradient(fun, x, step=1e-6, feasible=None) -> np.ndarray:
    """Central-difference gradient with relative step ``step * max(1, |x_k|)``.

    Falls back to a one-sided difference when ``feasible`` rejects one of
    the two central points.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    f0 = None
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        ok_p = feasible is None or feasible(xp)
        ok_m = feasible is None or feasible(xm)
        if ok_p and ok_m:
            g[k] = (fun(xp) - fun(xm)) / (2 * h)
        else:
            f0 = fun(x) if f0 is None else f0
            g[k] = (fun(xp) - f0) / h if ok_p else (f0 - fun(xm)) / h
    return g


def numerical_hessian(fun, x, rel_step=1e-4) -> np.ndarray:
    """Central finite-difference Hessian, steps ``rel_step * max(1, |x_k|)``."""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    f0 = fun(x)
    H = np.empty((k, k))

    def at(*moves):
        xx = x.copy()
        for i, s in moves:
            xx[i] += s * h[i]
        return fun(xx)

    for i in range(k):
        H[i, i] = (at((i, 1)) - 2 * f0 + at((i, -1))) / h[i] ** 2
        for j in range(i):
            v = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1)) + at((i, -1), (j, -1)))
            H[i, j] = H[j, i] = v / (4 * h[i] * h[j])
    return H


def _bfgs(fun, x0, gtol, max_iter, feasible, grad_step=1e-6):
    """Quasi-Newton minimisation that never leaves the feasible set.

    Infeasible or non-finite trial points are treated like a failed Armijo
    test, so the step is halved until it lands inside.  Returns
    ``(x, f, grad, iterations, converged)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = fun(x)
    g = numerical_gradient(fun, x, grad_step, feasible)
    H = np.eye(x.size)
    first = True
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g), initial=0.0) < gtol:
            return x, fx, g, it - 1, True
        d = -H @ g
        slope = g @ d
        if not slope < 0:
            H = np.eye(x.size)
            d, slope = -g, -(g @ g)
        step = 1.0
        while True:
            xn = x + step * d
            if feasible(xn):
                fn = fun(xn)
                if np.isfinite(fn) and fn <= fx + 1e-4 * step * slope:
                    break
            step *= 0.5
            if step < 1e-14:
                return x, fx, g, it, bool(np.max(np.abs(g)) < gtol)
        gn = numerical_gradient(fun, xn, grad_step, feasible)
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                H = np.eye(x.size) * (sy / (y @ y))
                first = False
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = xn, fn, gn
        if abs(fx) == np.inf:
            break
    return x, fx, g, it, bool(np.max(np.abs(g)) < gtol)


# ---------------------------------------------------------------------------
# likelihood


class Likelihood:
    """Log-likelihood of one panel, with data-only quantities precomputed.

    ``W Y_t`` and ``Y_{t-1}`` are fixed for the whole optimisation, as are
    the eigenvalues of ``W``; evaluating the likelihood then needs only
    ``p x p`` eigenvalues and ``O(T n p)`` arithmetic.
    """

    def __init__(self, data: PanelData, W, pi_zero: bool = False):
        M = as_matrix(W)
        if M.shape != (data.n, data.n):
            raise ShapeMismatch(f"W is {M.shape}, data has n={data.n}")
        self.data = data
        self.weights = W
        self.pi_zero = pi_zero
        T, n, p, q = data.T, data.n, data.p, data.q
        self.N = T * n * p
        self.WY = spatial_lag(M, data.Y)
        self.lag = data.lagged
        if isinstance(W, SpatialWeights):
            ev = W.eigenvalues
        else:
            dense = M.toarray() if hasattr(M, "toarray") else M
            try:
                ev = np.linalg.eigvals(dense).astype(complex)
            except np.linalg.LinAlgError:
                ev = None
        self.w_eigenvalues = ev
        self._dense_W = None if ev is not None else (M.toarray() if hasattr(M, "toarray") else M)
        self._profile = None

    # -- pieces ---------------------------------------------------------
    def is_stable(self, Psi, margin=0.0) -> bool:
        return stability_check(Psi, self.weights, margin).stable

    def log_det(self, Psi) -> float:
        Psi = np.asarray(Psi, dtype=float)
        if self.w_eigenvalues is not None:
            mu = np.linalg.eigvals(Psi)
            val = float(np.sum(np.log(1.0 - np.multiply.outer(mu, self.w_eigenvalues))).real)
        else:
            S = np.eye(self.N // self.data.T) - np.kron(Psi.T, self._dense_W)
            sign, val = np.linalg.slogdet(S)
            if sign <= 0:
                raise NonFiniteLogDet(f"determinant of the spatial filter has sign {sign}")
        if not np.isfinite(val):
            raise NonFiniteLogDet("log-determinant is not finite")
        return val

    def residuals(self, params: ModelParams) -> np.ndarray:
        d = self.data
        return d.Y - regression_mean(d.X, params.B) - self.WY @ params.Psi - self.lag @ params.Pi

    def rss(self, params: ModelParams) -> float:
        E = self.residuals(params)
        return float(np.einsum("tnp,tnp->", E, E))

    def loglik(self, params: ModelParams, form: str = "standard", margin: float = 0.0) -> float:
        if not params.sigma2 > 0:
            raise ValidationError("the likelihood needs sigma2 > 0")
        if not self.is_stable(params.Psi, margin):
            raise Unstable("Psi lies outside the stability region for this W")
        T, N, p, n = self.data.T, self.N, self.data.p, self.data.n
        s2 = params.sigma2
        ld = self.log_det(params.Psi)
        rss = self.rss(params)
        if form == "standard":
            return -0.5 * N * np.log(2 * np.pi * s2) + T * ld - rss / (2 * s2)
        if form == "paper-verbatim":
            return (
                -0.5 * N * np.log(2 * np.pi)
                + T * n * np.log(s2) / (2 * p)
                + T * ld / p
                - rss / (2 * p * s2)
            )
        raise ValidationError(f"unknown likelihood form {form!r}")

    # -- profile in Psi -------------------------------------------------
    def _prepare_profile(self):
        d = self.data
        T, n, p, q = d.T, d.n, d.p, d.q
        lag = self.lag.reshape(T * n, p)
        WY = self.WY.reshape(T * n, p)
        cols = []
        for j in range(p):
            Z = d.X[:, :, :, j].transpose(0, 2, 1).reshape(T * n, q)
            if not self.pi_zero:
                Z = np.hstack([Z, lag])
            y = d.Y[:, :, j].reshape(T * n)
            if Z.shape[1]:
                if Z.shape[1] > Z.shape[0] or np.linalg.matrix_rank(Z) < Z.shape[1]:
                    raise SingularDesign(
                        f"regressor/lag design for component {j + 1} is rank deficient "
                        f"({Z.shape[1]} columns)"
                    )
                Q, R = np.linalg.qr(Z)
                qy, qF = Q.T @ y, Q.T @ WY
                e = y - Q @ qy
                F = WY - Q @ qF
            else:
                R = qy = qF = None
                e, F = y, WY
            cols.append((e, F, R, qy, qF))
        self._profile = cols

    def profile(self, Psi) -> tuple[float, np.ndarray, np.ndarray, float]:
        """Profiled log-likelihood at ``Psi`` and the implied ``B, Pi, sigma2``."""
        if self._profile is None:
            self._prepare_profile()
        Psi = np.asarray(Psi, dtype=float)
        d = self.data
        p, q = d.p, d.q
        B = np.zeros((q, p))
        Pi = np.zeros((p, p))
        rss = 0.0
        for j, (e, F, R, qy, qF) in enumerate(self._profile):
            r = e - F @ Psi[:, j]
            rss += float(r @ r)
            if R is not None:
                coef = np.linalg.solve(R, qy - qF @ Psi[:, j])
                B[:, j] = coef[:q]
                if not self.pi_zero:
                    Pi[:, j] = coef[q:]
        s2 = max(rss / self.N, np.finfo(float).tiny)
        ll = -0.5 * self.N * (np.log(2 * np.pi * s2) + 1.0) + d.T * self.log_det(Psi)
        return ll, B, Pi, s2


def loglik(params: ModelParams, data: PanelData, W, form: str = "standard") -> float:
    """Gaussian log-likelihood of ``data`` given ``Y0`` (see module docstring).

    ``form="paper-verbatim"`` evaluates an alternative normalisation with
    ``(D-1)`` factors on the variance, log-determinant and quadratic terms;
    it is unbounded in ``sigma2`` and exists for diagnostics only.
    """
    return Likelihood(data, W).loglik(params, form)


def concentrated_loglik(Psi, data: PanelData, W, pi_zero: bool = False):
    """Profile likelihood in ``Psi``.

    Returns
    -------
    ll : float
    params : ModelParams
        ``Psi`` with the least-squares ``B``, ``Pi`` and ``sigma2 = RSS/(Tnp)``.
    """
    lik = Likelihood(data, W, pi_zero=pi_zero)
    Psi = np.asarray(Psi, dtype=float)
    if not lik.is_stable(Psi):
        raise Unstable("Psi lies outside the stability region for this W")
    ll, B, Pi, s2 = lik.profile(Psi)
    return ll, ModelParams(B, Psi, Pi, s2)


# ---------------------------------------------------------------------------
# fitting


def _free_mask(q, p, opts: FitOptions) -> np.ndarray:
    mask = np.ones(q * p + 2 * p * p + 1, dtype=bool)
    if opts.psi_zero:
        mask[q * p : q * p + p * p] = False
    if opts.pi_zero:
        mask[q * p + p * p : q * p + 2 * p * p] = False
    return mask


def _optimize(fun, x0, opts: FitOptions, feasible):
    if x0.size == 0:
        return x0, fun(x0), np.zeros(0), 0, True
    if opts.optimizer == "quasi_newton":
        return _bfgs(fun, x0, opts.gradient_tolerance, opts.max_iterations, feasible)

    def guarded(x):
        return fun(x) if feasible(x) else np.inf

    res = scipy.optimize.minimize(
        guarded,
        x0,
        method="Nelder-Mead",
        options=dict(
            maxiter=opts.max_iterations * 50 * x0.size,
            xatol=1e-10,
            fatol=1e-14,
            initial_simplex=x0 + np.vstack([np.zeros(x0.size), 0.05 * np.eye(x0.size)]),
        ),
    )
    g = numerical_gradient(fun, res.x, feasible=feasible)
    return res.x, res.fun, g, int(res.nit), bool(np.max(np.abs(g)) < opts.gradient_tolerance)


def fit(data: PanelData, W, opts: FitOptions | None = None) -> FitResult:
    """Quasi-maximum-likelihood fit of ``(B, Psi, Pi, sigma2)``.

    The search starts at ``Psi = 0`` and rejects any trial point outside
    ``rho(Psi) rho(W) < 1 - stability_margin``.  Non-convergence is
    reported through ``FitResult.converged`` (with a warning), not raised.
    """
    opts = opts or FitOptions()
    q, p = data.q, data.p
    lik = Likelihood(data, W, pi_zero=opts.pi_zero)
    N = lik.N
    margin = opts.stability_margin
    messages = []

    def stable(Psi):
        return lik.is_stable(Psi, margin)

    if opts.concentrate:
        if opts.psi_zero:
            def unpack(x):
                return np.zeros((p, p))
        else:
            def unpack(x):
                return x.reshape(p, p)

        def obj(x):
            return -lik.profile(unpack(x))[0] / N

        def feasible(x):
            return stable(unpack(x))

        x0 = np.zeros(0 if opts.psi_zero else p * p)
        x, fx, g, iters, converged = _optimize(obj, x0, opts, feasible)
        _, B, Pi, s2 = lik.profile(unpack(x))
        params = ModelParams(B, unpack(x), Pi, s2)
    else:
        mask = _free_mask(q, p, opts)
        _, B0, Pi0, s20 = lik.profile(np.zeros((p, p)))
        theta0 = ModelParams(B0, np.zeros((p, p)), Pi0, s20).theta()

        def to_params(x):
            th = theta0.copy()
            th[mask] = x
            th[-1] = np.exp(th[-1])
            return ModelParams.from_theta(th, q, p)

        def obj(x):
            return -lik.loglik(to_params(x)) / N

        def feasible(x):
            return stable(to_params(x).Psi)

        x0 = theta0.copy()
        x0[-1] = np.log(x0[-1])
        x, fx, g, iters, converged = _optimize(obj, x0[mask], opts, feasible)
        params = to_params(x)

    grad_norm = float(np.max(np.abs(g), initial=0.0))
    if not converged and params.sigma2 <= 1e-20 * max(1.0, float(np.mean(data.Y**2))):
        # residuals vanish: the likelihood is unbounded above at this point
        converged = True
        messages.append("exact fit: residual variance is numerically zero")
    if not converged:
        msg = f"optimizer did not converge (max |gradient| {grad_norm:.3g} after {iters} iterations)"
        messages.append(msg)
        warnings.warn(msg)

    ll = lik.loglik(params) if params.sigma2 > 0 else np.inf
    if opts.likelihood == "paper-verbatim":
        messages.append(
            "paper-verbatim likelihood is unbounded in sigma2; estimates maximise the standard "
            "form and loglik reports the verbatim objective at them (experimental)"
        )
        ll = lik.loglik(params, form="paper-verbatim")

    result = FitResult(
        params=params,
        loglik=ll,
        names=param_names(q, p, data.has_intercept)[:-1] + ["sigma"],
        estimates=np.concatenate([params.theta()[:-1], [np.sqrt(params.sigma2)]]),
        std_errors=np.full(q * p + 2 * p * p + 1, np.nan),
        t_stats=np.full(q * p + 2 * p * p + 1, np.nan),
        vcov=np.full((q * p + 2 * p * p + 1,) * 2, np.nan),
        converged=bool(converged),
        iterations=int(iters),
        gradient_norm=grad_norm,
        regressor_names=data.regressor_names,
        free=_free_mask(q, p, opts),
        loglik_form=opts.likelihood,
        messages=messages,
    )
    if opts.compute_se:
        standard_errors(result, lik, opts.hessian_step)
    return result


def standard_errors(result: FitResult, lik: Likelihood, rel_step: float = 1e-4) -> FitResult:
    """Fill ``vcov``, ``std_errors`` and ``t_stats`` of ``result`` in place.

    ``vcov`` is the inverse of the negative Hessian of the standard
    log-likelihood over the free parameters (with ``sigma2`` as the variance
    parameter), then mapped to ``sigma`` by the delta method.
    """
    prm = result.params
    q, p = prm.q, prm.p
    free = result.free if result.free is not None else np.ones(q * p + 2 * p * p + 1, bool)
    if not prm.sigma2 > 1e-12:
        result.messages.append("standard errors undefined: residual variance is zero")
        return result
    theta = prm.theta()

    def f(x):
        th = theta.copy()
        th[free] = x
        cand = ModelParams.from_theta(th, q, p)
        if cand.sigma2 <= 0 or not lik.is_stable(cand.Psi):
            return np.nan
        return lik.loglik(cand)

    H = numerical_hessian(f, theta[free], rel_step)
    if not np.all(np.isfinite(H)):
        result.messages.append("Hessian has non-finite entries; standard errors unavailable")
        warnings.warn(result.messages[-1])
        return result
    info = -H
    try:
        cond = np.linalg.cond(info)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        result.messages.append("Hessian is singular; using the pseudo-inverse")
        warnings.warn(result.messages[-1])
        cov_free = np.linalg.pinv(info)
    else:
        cov_free = np.linalg.inv(info)
    cov_free = 0.5 * (cov_free + cov_free.T)

    k = theta.size
    vcov = np.full((k, k), np.nan)
    vcov[np.ix_(free, free)] = cov_free
    jac = np.ones(k)
    jac[-1] = 1.0 / (2.0 * np.sqrt(prm.sigma2))
    vcov = vcov * np.outer(jac, jac)

    var = np.diag(vcov).copy()
    neg = free & ~(var >= 0)
    if neg.any():
        bad = [result.names[i] for i in np.flatnonzero(neg)]
        result.messages.append(f"non-positive variance for {bad}; standard errors set to missing")
        warnings.warn(result.messages[-1])
    se = np.where(var >= 0, np.sqrt(np.where(var >= 0, var, 0.0)), np.nan)
    se[~free] = np.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, result.estimates / se, np.nan)
    result.vcov, result.std_errors, result.t_stats = vcov, se, t
    return result
