import time

import numpy as np
import pytest

from rpretrain.data import SeededRng, make_folds
from rpretrain.lasso import (PenaltySpec, Problem, cv_weighted_lasso, fit_logistic_lasso_cv, fit_unilasso,
                             fit_weighted_lasso, kkt_residual, soft_threshold)


def orthonormal_design(gen, n, p):
    """Columns orthogonal to each other and to the intercept, with x_j'x_j / n = 1."""
    a = np.column_stack([np.ones(n), gen.standard_normal((n, p))])
    q, _ = np.linalg.qr(a)
    return q[:, 1:] * np.sqrt(n)


def test_soft_threshold_values():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_orthonormal_closed_form_50_designs(gen):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n, p = 20, 5
        x = orthonormal_design(gen, n, p)
        y = x @ gen.normal(0, 2, p) + gen.normal(0, 1, n) + 3.0
        f = gen.uniform(0.5, 2.0, p)
        lam = gen.uniform(0.05, 1.0)
        fit = fit_weighted_lasso(x, y, penalty=f, lam=lam, standardize=False)
        c = x.T @ (y - y.mean()) / n
        expected = np.array([soft_threshold(c[j], lam * f[j]) for j in range(p)])
        worst = max(worst, np.max(np.abs(fit.coefficients - expected)))
        assert fit.intercept == pytest.approx(y.mean() - x.mean(axis=0) @ expected, abs=1e-8)
    assert worst <= 1e-8
    assert time.perf_counter() - t0 < 10


def test_lambda_zero_matches_least_squares(gen):
    n, p = 60, 8
    x = gen.standard_normal((n, p))
    y = x @ gen.standard_normal(p) + gen.normal(0, 0.5, n) + 1.0
    v = gen.uniform(0.5, 2.0, n)
    fit = fit_weighted_lasso(x, y, obs_weights=v, lam=0.0)
    a = np.column_stack([np.ones(n), x])
    sw = np.sqrt(v)
    beta = np.linalg.solve((a * v[:, None]).T @ a, (a * v[:, None]).T @ y)
    ls = np.linalg.lstsq(a * sw[:, None], y * sw, rcond=None)[0]
    assert np.allclose(beta, ls)
    assert fit.intercept == pytest.approx(beta[0], abs=1e-6)
    assert np.max(np.abs(fit.coefficients - beta[1:])) < 1e-6


def test_kkt_on_cv_fits(gen):
    for trial in range(6):
        n, p = 120, 30
        x = gen.standard_normal((n, p))
        y = x[:, :5] @ gen.uniform(1, 2, 5) + gen.normal(0, 2, n)
        v = gen.uniform(0.2, 1.5, n) if trial % 2 else None
        f = gen.choice([1.0, 4.0], p) if trial >= 3 else None
        cv = cv_weighted_lasso(x, y, obs_weights=v, penalty=f, rng=SeededRng(trial))
        assert kkt_residual(x, y, v, f, cv.fit_at_min) <= 1e-6
        assert cv.fit_at_min.converged


def test_penalty_factor_rescaling_is_equivariant(gen):
    # (c f, lam / c) describes the same problem
    x = gen.standard_normal((80, 10))
    y = x[:, :3].sum(axis=1) + gen.normal(0, 1, 80)
    f = gen.uniform(0.5, 3, 10)
    a = fit_weighted_lasso(x, y, penalty=f, lam=0.1)
    b = fit_weighted_lasso(x, y, penalty=5 * f, lam=0.02)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-7)


def test_column_scaling_equivariant_when_standardized(gen):
    x = gen.standard_normal((80, 6))
    y = x @ np.array([1.0, -1, 0.5, 0, 0, 0]) + gen.normal(0, 1, 80)
    s = np.array([1.0, 10.0, 0.1, 3.0, 1.0, 2.0])
    a = fit_weighted_lasso(x, y, lam=0.05)
    b = fit_weighted_lasso(x * s, y, lam=0.05)
    assert np.allclose(a.coefficients, b.coefficients * s, atol=1e-6)


def test_infinite_factor_excludes_and_zero_factor_always_enters(gen):
    x = gen.standard_normal((100, 5))
    y = 3 * x[:, 0] + 0.05 * x[:, 1] + gen.normal(0, 1, 100)
    f = np.array([np.inf, 0.0, 1.0, 1.0, 1.0])
    fit = fit_weighted_lasso(x, y, penalty=f, lam=10.0)
    assert fit.coefficients[0] == 0
    assert fit.coefficients[1] != 0
    assert np.all(fit.coefficients[2:] == 0)


def test_penalty_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec(np.array([1.0, -1.0]))
    assert np.all(PenaltySpec.uniform(3).factors == 1)


def test_zero_weights_drop_rows(gen):
    x = gen.standard_normal((50, 4))
    y = x[:, 0] + gen.normal(0, 1, 50)
    v = np.ones(50)
    v[40:] = 0
    y2 = y.copy()
    y2[40:] = 1e3  # ignored rows
    a = fit_weighted_lasso(x, y, obs_weights=v, lam=0.05)
    b = fit_weighted_lasso(x, y2, obs_weights=v, lam=0.05)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-8)


def test_duplicate_columns_only_one_copy_enters(gen):
    x = gen.standard_normal((60, 3))
    x = np.column_stack([x, x[:, 0]])
    y = 2 * x[:, 0] + gen.normal(0, 0.5, 60)
    fit = fit_weighted_lasso(x, y, lam=0.01)
    assert (fit.coefficients[0] != 0) != (fit.coefficients[3] != 0)
    pred_single = fit_weighted_lasso(x[:, :3], y, lam=0.01).predict(x[:, :3])
    assert np.allclose(fit.predict(x), pred_single, atol=1e-6)


def test_gram_problem_objective_matches_direct(gen):
    x = gen.standard_normal((40, 5))
    y = gen.standard_normal(40)
    v = gen.uniform(0.5, 1.5, 40)
    prob = Problem(x, y, v, standardize=False)
    fit = fit_weighted_lasso(x, y, obs_weights=v, lam=0.1, standardize=False)
    r = y - fit.predict(x)
    direct = 0.5 * (v @ r**2) / 40 + 0.1 * np.abs(fit.coefficients).sum()
    assert prob.objective(fit.coefficients, 0.1, np.ones(5)) == pytest.approx(direct, rel=1e-10)


def test_cv_ties_pick_largest_lambda(gen):
    # constant outcome: every lambda predicts the same, so the CV curve is flat
    x = gen.standard_normal((30, 3))
    cv = cv_weighted_lasso(x, np.full(30, 2.0), rng=SeededRng(0))
    assert np.ptp(cv.cv_mean) == 0
    assert cv.index_min == 0


def test_logistic_lasso_probabilities(gen):
    n = 400
    x = gen.standard_normal((n, 5))
    p_true = 1 / (1 + np.exp(-(x[:, 0] - 0.5 * x[:, 1])))
    w = (gen.uniform(size=n) < p_true).astype(float)
    folds = make_folds(n, 5, w, SeededRng(3))
    cv = fit_logistic_lasso_cv(x, w, folds)
    prob = cv.fit_at_min.predict_proba(x)
    assert np.all((prob > 0) & (prob < 1))
    assert np.corrcoef(prob, p_true)[0, 1] > 0.9


def test_unilasso_keeps_univariate_signs(gen):
    n = 300
    x = gen.standard_normal((n, 8))
    y = 2 * x[:, 0] - 1.5 * x[:, 1] + gen.normal(0, 1, n)
    folds = make_folds(n, 5, np.r_[np.ones(n // 2), np.zeros(n - n // 2)], SeededRng(1))
    fit = fit_unilasso(x, y, folds)
    slopes = np.array([np.cov(x[:, j], y)[0, 1] for j in range(8)])
    nz = fit.coefficients != 0
    assert nz[0] and nz[1]
    assert np.all(np.sign(fit.coefficients[nz]) == np.sign(slopes[nz]))


def test_excluded_feature_never_enters(gen):
    x = gen.standard_normal((100, 4))
    y = 3 * x[:, 0] + x[:, 1] + gen.normal(0, 0.1, 100)
    fit = fit_weighted_lasso(x, y, penalty=[np.inf, 1, 1, 1], lam=0.01)
    assert fit.coefficients[0] == 0.0


def test_lambda_max_and_path():
    from rpretrain.lasso import lambda_path

    gen = np.random.default_rng(5)
    x = gen.standard_normal((100, 6))
    y = x[:, 0] + gen.standard_normal(100)
    f = np.array([1.0, 2.0, 1.0, 1.0, 0.5, 1.0])
    grid = lambda_path(x, y, penalty=f, n_lambda=100, ratio=0.01)
    assert grid.size == 100 and np.all(np.diff(grid) < 0)
    assert grid[0] / grid[-1] == pytest.approx(100.0)
    top = fit_weighted_lasso(x, y, penalty=f, lam=grid[0])
    assert np.all(top.coefficients == 0) and top.intercept == pytest.approx(y.mean())
    assert lambda_path(x, y, penalty=f / 2, n_lambda=5)[0] == pytest.approx(2 * grid[0])


def test_pure_noise_selects_almost_nothing():
    sizes = []
    for r in range(100):
        g = np.random.default_rng(1000 + r)
        x = g.standard_normal((100, 20))
        y = g.standard_normal(100)
        cv = cv_weighted_lasso(x, y, rng=SeededRng(r))
        sizes.append(int(np.sum(cv.fit_at_min.coefficients != 0)))
    assert np.median(sizes) <= 2


def test_cv_is_deterministic_and_finds_noiseless_signal(gen):
    x = gen.standard_normal((80, 10))
    y = x[:, 0].copy()
    folds = make_folds(80, 5, np.r_[np.zeros(40), np.ones(40)], SeededRng(3))
    a = cv_weighted_lasso(x, y, folds=folds)
    b = cv_weighted_lasso(x, y, folds=folds)
    assert np.array_equal(a.cv_mean, b.cv_mean) and np.array_equal(a.fit_at_min.coefficients,
                                                                    b.fit_at_min.coefficients)
    assert a.fit_at_min.coefficients[0] != 0


def test_logistic_propensity_balanced_and_clipped():
    means = []
    for r in range(100):
        g = np.random.default_rng(2000 + r)
        x = g.standard_normal((200, 5))
        w = np.r_[np.zeros(100), np.ones(100)]
        g.shuffle(w)
        cv = fit_logistic_lasso_cv(x, w, rng=SeededRng(r))
        pr = cv.fit_at_min.predict_proba(x)
        assert np.all((pr >= 0.01) & (pr <= 0.99))
        means.append(pr.mean())
    assert abs(np.mean(means) - 0.5) <= 0.05


def test_logistic_recovers_positive_coefficient():
    g = np.random.default_rng(7)
    x = g.standard_normal((3000, 4))
    w = (g.uniform(size=3000) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    cv = fit_logistic_lasso_cv(x, w, rng=SeededRng(0))
    assert cv.fit_at_min.coefficients[0] > 0


def test_unilasso_single_feature_and_zero_slope(gen):
    n = 200
    x = gen.standard_normal((n, 3))
    y = 2 * x[:, 0] + gen.normal(0, 0.5, n)
    # make column 2 exactly uncorrelated with y in the full sample
    yc = y - y.mean()
    x[:, 2] -= x[:, 2].mean()
    x[:, 2] -= (x[:, 2] @ yc) / (yc @ yc) * yc
    fit = fit_unilasso(x, y, rng=SeededRng(0))
    assert 0 in fit.active_set and fit.coefficients[0] > 0
    assert 2 not in fit.active_set
