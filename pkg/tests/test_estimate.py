import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from compostar.estimate import (
    FitOptions,
    Likelihood,
    concentrated_loglik,
    fit,
    loglik,
    numerical_gradient,
    numerical_hessian,
)
from compostar.exceptions import SingularDesign, Unstable, ValidationError
from compostar.model import ModelParams, PanelData, SpatialFilter, stability_check
from compostar.simulate import SimConfig, simulate
from compostar.weights import SpatialWeights, rook_grid, row_standardize

from oracles import dense_filter, dense_loglik, random_stable_psi, random_weights, vec

STATIONARY = ModelParams(
    B=[[1.0, 2.0], [-2.0, 1.0], [3.0, -2.0]],
    Psi=[[0.7, 0.2], [0.1, 0.7]],
    Pi=[[0.05, 0.05], [0.1, 0.05]],
    sigma2=1.0,
)


def _sim(side, T, seed, prm=STATIONARY, **kw):
    W = row_standardize(rook_grid(side))
    cfg = SimConfig(prm, W, T, seed=seed, intercept=True, n_regressors=prm.q - 1, **kw)
    return simulate(cfg), W


# -- likelihood ------------------------------------------------------------


def test_loglik_matches_dense_oracle(rng):
    n, p, T, q = 4, 2, 3, 2
    A = random_weights(rng, n)
    W = SpatialWeights(sp.csr_array(A))
    prm = ModelParams(rng.normal(size=(q, p)), random_stable_psi(rng, p, W.spectral_radius),
                      rng.normal(size=(p, p)) * 0.3, 0.8)
    d = PanelData(rng.normal(size=(T, n, p)), rng.normal(size=(n, p)), rng.normal(size=(T, q, n, p)))
    expected = dense_loglik(d.Y, d.Y0, d.X, prm.B, prm.Psi, prm.Pi, prm.sigma2, A)
    assert loglik(prm, d, W) == pytest.approx(expected, rel=1e-12)


def test_loglik_noiseless_truth():
    prm = STATIONARY.replace(sigma2=0.0)
    d, W = _sim(3, 6, 0, prm)
    s = 0.37
    N = d.T * d.n * d.p
    ld = SpatialFilter(W, prm.Psi).log_det()
    assert loglik(prm.replace(sigma2=s), d, W) == pytest.approx(-N / 2 * np.log(2 * np.pi * s) + d.T * ld, rel=1e-10)


def test_loglik_psi_zero_is_iid_regression(rng):
    d, W = _sim(3, 5, 1)
    prm = STATIONARY.replace(Psi=np.zeros((2, 2)))
    E = d.Y - np.einsum("tqnp,qp->tnp", d.X, prm.B) - d.lagged @ prm.Pi
    from scipy.stats import norm

    expected = norm.logpdf(E, scale=np.sqrt(prm.sigma2)).sum()
    assert loglik(prm, d, W) == pytest.approx(expected, rel=1e-12)


def test_loglik_rejects_unstable_and_bad_sigma():
    d, W = _sim(3, 5, 1)
    with pytest.raises(Unstable):
        loglik(STATIONARY.replace(Psi=1.5 * np.eye(2)), d, W)
    with pytest.raises(ValidationError):
        loglik(STATIONARY.replace(sigma2=0.0), d, W)


def test_verbatim_likelihood_form():
    d, W = _sim(3, 5, 2)
    lik = Likelihood(d, W)
    T, n, p = d.T, d.n, d.p
    N = T * n * p
    s2 = 1.3
    prm = STATIONARY.replace(sigma2=s2)
    expected = (-N / 2 * np.log(2 * np.pi) + T * n * np.log(s2) / (2 * p)
                + T * lik.log_det(prm.Psi) / p - lik.rss(prm) / (2 * p * s2))
    assert loglik(prm, d, W, form="paper-verbatim") == pytest.approx(expected, rel=1e-12)
    # increasing without bound in sigma2 once the quadratic term is negligible
    big = [loglik(prm.replace(sigma2=v), d, W, form="paper-verbatim") for v in (1e6, 1e8, 1e10)]
    assert big[0] < big[1] < big[2]


# -- profile likelihood ----------------------------------------------------


def test_concentrated_recovers_noiseless_truth():
    prm = STATIONARY.replace(sigma2=0.0)
    d, W = _sim(4, 10, 3, prm)
    ll, est = concentrated_loglik(prm.Psi, d, W)
    np.testing.assert_allclose(est.B, prm.B, atol=1e-8)
    np.testing.assert_allclose(est.Pi, prm.Pi, atol=1e-8)
    assert est.sigma2 < 1e-16


def test_profile_equals_full_loglik():
    d, W = _sim(4, 10, 4)
    Psi = np.array([[0.5, 0.1], [0.0, 0.4]])
    ll, est = concentrated_loglik(Psi, d, W)
    assert ll == pytest.approx(loglik(est, d, W), abs=1e-9 * abs(ll))


def test_profile_argmax_matches_full_likelihood_grid():
    # p = 1, n = 9, T = 50: for every grid psi, maximise the full likelihood in
    # (B, pi, sigma2) by dense least squares in vec form
    W = row_standardize(rook_grid(3))
    prm = ModelParams([[0.5], [1.0]], [[0.4]], [[0.3]], 1.0)
    d = simulate(SimConfig(prm, W, 50, seed=7, intercept=True, n_regressors=1))
    A = W.dense()
    grid = np.linspace(-0.8, 0.8, 33)
    full, prof = [], []
    Z = np.column_stack([
        np.concatenate([vec(d.X[t, 0]) for t in range(d.T)]),
        np.concatenate([vec(d.X[t, 1]) for t in range(d.T)]),
        np.concatenate([vec(yl) for yl in d.lagged]),
    ])
    for psi in grid:
        S = dense_filter(A, np.array([[psi]]))
        ys = np.concatenate([S @ vec(yt) for yt in d.Y])
        coef = np.linalg.lstsq(Z, ys, rcond=None)[0]
        s2 = np.mean((ys - Z @ coef) ** 2)
        cand = ModelParams(coef[:2, None], [[psi]], [[coef[2]]], s2)
        full.append(loglik(cand, d, W))
        prof.append(concentrated_loglik([[psi]], d, W)[0])
    assert np.argmax(full) == np.argmax(prof)
    np.testing.assert_allclose(prof, full, rtol=1e-10)


def test_singular_design():
    W = row_standardize(rook_grid(3))
    d = PanelData(np.ones((4, 9, 2)), np.ones((9, 2)), np.ones((4, 1, 9, 2)), ("intercept",))
    with pytest.raises(SingularDesign):
        concentrated_loglik(np.zeros((2, 2)), d, W)


# -- derivatives -----------------------------------------------------------


def test_gradient_stencils_agree(rng):
    d, W = _sim(4, 20, 5)
    lik = Likelihood(d, W)
    th = STATIONARY.theta()

    def f(x):
        return lik.loglik(ModelParams.from_theta(x, 3, 2)) / lik.N

    done = 0
    while done < 5:
        x = th + rng.normal(scale=0.05, size=th.size)
        if not lik.is_stable(ModelParams.from_theta(x, 3, 2).Psi, 1e-2):
            continue
        done += 1
        g1 = numerical_gradient(f, x, step=1e-5)
        g2 = numerical_gradient(f, x, step=5e-6)
        assert np.max(np.abs(g1 - g2)) / np.max(np.abs(g1)) < 1e-4


def test_hessian_symmetry():
    d, W = _sim(4, 20, 6)
    res = fit(d, W, FitOptions(compute_se=False))
    lik = Likelihood(d, W)

    def f(x):
        return lik.loglik(ModelParams.from_theta(x, 3, 2))

    H = numerical_hessian(f, res.params.theta())
    # cross terms come from a symmetric four-point stencil; a second step
    # size checks the truncation error
    H2 = numerical_hessian(f, res.params.theta(), rel_step=5e-5)
    assert np.max(np.abs(H - H.T)) / np.max(np.abs(H)) < 1e-4
    assert np.max(np.abs(H - H2)) / np.max(np.abs(H)) < 1e-3


# -- fitting ---------------------------------------------------------------


def test_fit_noiseless_exact():
    prm = STATIONARY.replace(sigma2=0.0)
    d, W = _sim(4, 20, 8, prm)
    res = fit(d, W)
    assert res.converged
    np.testing.assert_allclose(res.params.Psi, prm.Psi, atol=1e-6)
    np.testing.assert_allclose(res.params.Pi, prm.Pi, atol=1e-6)
    np.testing.assert_allclose(res.params.B, prm.B, atol=1e-6)
    assert any("exact fit" in m for m in res.messages)


def test_fit_self_consistency_largest_cell():
    # 64 units, 160 periods; every replication within 0.1 of the truth
    worst = []
    for r in range(8):
        d, W = _sim(8, 160, 100 + r)
        res = fit(d, W, FitOptions(compute_se=False))
        assert res.converged
        worst.append(max(np.abs(res.params.Psi - STATIONARY.Psi).max(), np.abs(res.params.Pi - STATIONARY.Pi).max()))
    assert max(worst) < 0.1


def test_fit_null_model_within_three_se():
    W = row_standardize(rook_grid(5))
    null = ModelParams(np.zeros((0, 2)), np.zeros((2, 2)), np.zeros((2, 2)), 1.0)
    d = simulate(SimConfig(null, W, 60, seed=12))
    res = fit(d, W)
    k = slice(0, 8)
    z = np.abs(res.estimates[k] / res.std_errors[k])
    assert np.all(z < 3)


def test_fit_invariant_to_regressor_order():
    d, W = _sim(4, 30, 13)
    a = fit(d, W, FitOptions(compute_se=False))
    b = fit(d.select_regressors([0, 2, 1]), W, FitOptions(compute_se=False))
    assert a.loglik == pytest.approx(b.loglik, abs=1e-6)
    np.testing.assert_allclose(a.params.B[[0, 2, 1]], b.params.B, atol=1e-4)


def test_concentrated_and_joint_paths_agree():
    for seed in range(3):
        d, W = _sim(4, 40, 20 + seed)
        a = fit(d, W, FitOptions(compute_se=False))
        b = fit(d, W, FitOptions(compute_se=False, concentrate=False, max_iterations=500))
        assert a.converged and b.converged
        assert abs(a.loglik - b.loglik) < 1e-5 * max(1.0, abs(a.loglik)) + 1e-5


def test_nelder_mead_agrees():
    d, W = _sim(4, 30, 14)
    a = fit(d, W, FitOptions(compute_se=False))
    b = fit(d, W, FitOptions(compute_se=False, optimizer="nelder_mead"))
    assert b.loglik == pytest.approx(a.loglik, abs=1e-5)


def test_fit_never_leaves_stability_region():
    # truth close to the boundary: rho(Psi) = 0.98
    prm = STATIONARY.replace(Psi=[[0.9, 0.08], [0.08, 0.9]], Pi=np.zeros((2, 2)))
    d, W = _sim(4, 20, 15, prm)
    res = fit(d, W, FitOptions(compute_se=False))
    assert stability_check(res.params.Psi, W, margin=0.0).stable


def test_restrictions_give_exact_zeros_and_missing_se():
    d, W = _sim(4, 20, 16)
    res = fit(d, W, FitOptions(psi_zero=True))
    assert np.all(res.params.Psi == 0)
    rows = [r for r in res.table() if r[0] == "psi"]
    assert all(r[2] == 0.0 and np.isnan(r[3]) for r in rows)
    res = fit(d, W, FitOptions(pi_zero=True))
    assert np.all(res.params.Pi == 0)
    assert np.all(np.isnan(res.std_errors[10:14]))


def test_table_layout_and_t_stats():
    d, W = _sim(4, 20, 17)
    res = fit(d, W)
    rows = res.table()
    assert len(rows) == 3 * 2 + 4 + 4 + 1
    assert [r[0] for r in rows[:2]] == ["intercept", "intercept"]
    assert rows[-1][:2] == ("sigma", "sigma")
    assert rows[-1][2] == pytest.approx(np.sqrt(res.params.sigma2))
    for _, _, est, se, t in rows:
        assert se > 0
        assert t == pytest.approx(est / se, abs=1e-12 * max(1.0, abs(t)))


def test_sigma_se_by_delta_method():
    d, W = _sim(4, 30, 18)
    res = fit(d, W)
    # se(sigma2) for the Gaussian MLE is about sigma2 * sqrt(2/N)
    N = d.T * d.n * d.p
    assert res.std_errors[-1] == pytest.approx(np.sqrt(res.params.sigma2) * np.sqrt(2 / N) / 2, rel=0.05)


def test_se_scale_with_sample_size():
    ratios = []
    for seed in range(4):
        a = fit(*_sim(4, 40, 200 + seed)).std_errors
        b = fit(*_sim(4, 80, 300 + seed)).std_errors
        ratios.append(b[6:14] / a[6:14])
    assert np.mean(ratios) == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_not_converged_is_flagged():
    d, W = _sim(4, 20, 19)
    with pytest.warns(UserWarning, match="did not converge"):
        res = fit(d, W, FitOptions(max_iterations=1, compute_se=False))
    assert not res.converged


def test_verbatim_fit_reports_message():
    d, W = _sim(3, 10, 20)
    res = fit(d, W, FitOptions(likelihood="paper-verbatim", compute_se=False))
    assert res.loglik_form == "paper-verbatim"
    assert any("experimental" in m for m in res.messages)


def test_identification_on_average():
    W = row_standardize(rook_grid(6))
    rng = np.random.default_rng(0)
    gaps = []
    for r in range(100):
        d = simulate(SimConfig(STATIONARY, W, 80, seed=r, intercept=True, n_regressors=2))
        lik = Likelihood(d, W)
        th = STATIONARY.theta()
        while True:
            pert = th + np.r_[rng.choice([-0.1, 0.1], size=th.size - 1), 0.0]
            cand = ModelParams.from_theta(pert, 3, 2)
            if lik.is_stable(cand.Psi):
                break
        gaps.append(lik.loglik(STATIONARY) - lik.loglik(cand))
    assert np.mean(gaps) > 0


def test_fit_options_validation():
    with pytest.raises(ValidationError):
        FitOptions(optimizer="newton")
    with pytest.raises(ValidationError):
        FitOptions(likelihood="other")
    with pytest.raises(ValidationError):
        FitOptions(gradient_tolerance=0)


def test_warnings_clean_for_regular_fit():
    d, W = _sim(4, 20, 21)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit(d, W)
