import numpy as np
import pytest

from rpretrain.data import SeededRng
from rpretrain.nuisance import NuisanceEstimates, estimate_nuisances
from rpretrain.rlearner import (AlphaGrid, DEFAULT_ALPHAS, fit_pretrained_rlasso, fit_uni_rlasso, penalty_weights,
                                pseudo_outcome, rloss, rloss_terms)


@pytest.fixture(scope="module")
def nuis(small_sim, small_folds):
    d = small_sim.train
    return estimate_nuisances(d, small_folds, "lasso", SeededRng(3), e_hat=d.known_propensity)


def test_penalty_factors_from_support():
    pw = penalty_weights(np.array([0.0, 1.2, 0.0, -3.0]), 0.25)
    assert list(pw.factors) == [4.0, 1.0, 4.0, 1.0]
    assert list(penalty_weights(np.zeros(3), 1.0).factors) == [1.0, 1.0, 1.0]
    prot = penalty_weights(np.zeros(3), 0.5, protected=np.array([True, False, False]))
    assert list(prot.factors) == [1.0, 2.0, 2.0]
    with pytest.raises(ValueError):
        penalty_weights(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        penalty_weights(np.zeros(3), 1.5)


def test_alpha_grid_rules():
    assert AlphaGrid().values == DEFAULT_ALPHAS
    assert 0.375 in DEFAULT_ALPHAS
    with pytest.raises(ValueError):
        AlphaGrid((0.5, 0.25, 1.0))
    with pytest.raises(ValueError):
        AlphaGrid((0.5,))


def test_rloss_equals_weighted_pseudo_outcome_loss(gen):
    n = 500
    y, m = gen.standard_normal(n), gen.standard_normal(n)
    w = (gen.uniform(size=n) < 0.4).astype(float)
    e = gen.uniform(0.1, 0.9, n)
    tau = gen.standard_normal(n) * 3
    z = (y - m) / (w - e)
    v = (w - e) ** 2
    direct = rloss_terms(tau, y, w, m, e).mean()
    assert abs(direct - np.mean(v * (z - tau) ** 2)) <= 1e-10


def test_pseudo_outcome_positivity_guard(small_sim, nuis):
    bad = NuisanceEstimates(nuis.m_hat, small_sim.train.w.copy(), nuis.folds)
    with pytest.raises(ValueError, match="positivity"):
        pseudo_outcome(small_sim.train, bad)


def test_refit_satisfies_direct_rloss_optimality(small_sim, nuis):
    """The fitted effect lasso solves the penalized R-loss written directly in (y, w, m, e):
    (1/2n) sum ((y - m) - (w - e) tau(x))^2 + lambda sum_j sd_j |b_j|."""
    d = small_sim.train
    model = fit_pretrained_rlasso(d, nuis, alpha_grid=[1.0])
    b0, b = model.predictor.intercept, model.predictor.coefficients
    wt = d.w - nuis.e_hat
    resid = (d.y - nuis.m_hat) - wt * (b0 + d.x @ b)
    grad = np.column_stack([np.ones(d.n), d.x]).T @ (wt * resid) / d.n
    v = wt**2
    xm = v @ d.x / v.sum()
    sd = np.sqrt(v @ (d.x - xm) ** 2 / v.sum())
    lam = model.chosen_lambda2
    assert abs(grad[0]) < 1e-8
    g = grad[1:] / sd
    act = b != 0
    assert act.sum() > 0
    assert np.all(np.abs(g[act] - lam * np.sign(b[act])) < 1e-5 * lam + 1e-8)
    assert np.all(np.abs(g[~act]) <= lam * (1 + 1e-6))


def test_alpha_one_is_the_unpretrained_rlasso(small_sim, nuis):
    a = fit_pretrained_rlasso(small_sim.train, nuis, alpha_grid=[1.0])
    b = fit_pretrained_rlasso(small_sim.train, nuis, alpha_grid=[1.0], refit_rule="union")
    assert np.allclose(a.predictor.coefficients, b.predictor.coefficients)
    assert a.chosen_alpha == 1.0


def test_pretraining_helps_with_shared_support(small_sim, nuis):
    d, t = small_sim.train, small_sim.test
    base = fit_pretrained_rlasso(d, nuis, alpha_grid=[1.0])
    pt = fit_pretrained_rlasso(d, nuis, keep_per_alpha=True)
    assert pt.chosen_alpha in DEFAULT_ALPHAS
    assert pt.cv_rloss <= base.cv_rloss + 1e-12
    assert set(pt.diagnostics["per_alpha_models"]) == set(DEFAULT_ALPHAS)
    mse = lambda m: np.mean((m.predict(t.x) - t.true_tau) ** 2)  # noqa: E731
    assert mse(pt) < mse(base) * 1.05


def test_selection_is_smallest_cv_rloss(small_sim, nuis):
    m = fit_pretrained_rlasso(small_sim.train, nuis)
    by_alpha = m.diagnostics["cv_rloss_by_alpha"]
    best = min(by_alpha.values())
    assert m.cv_rloss == best
    assert m.chosen_alpha == min(a for a, v in by_alpha.items() if v == best)


def test_cv_rloss_matches_independent_rloss(small_sim, nuis):
    m = fit_pretrained_rlasso(small_sim.train, nuis, alpha_grid=[1.0])
    insample = rloss(m.predict(small_sim.train.x), small_sim.train, nuis)
    assert insample <= m.cv_rloss * 1.5 and insample > 0


def test_uni_rlasso_is_sparser(small_sim, nuis):
    r = fit_pretrained_rlasso(small_sim.train, nuis, alpha_grid=[1.0])
    u = fit_uni_rlasso(small_sim.train, nuis, alpha_grid=[1.0])
    assert u.active_set.size <= r.active_set.size + 2
    assert u.kind == "uni_rlasso"


def test_model_json_roundtrip(small_sim, nuis):
    from rpretrain.models import CATEModel

    m = fit_pretrained_rlasso(small_sim.train, nuis, alpha_grid=[0.5, 1.0])
    back = CATEModel.from_json(m.to_json())
    assert np.allclose(back.predict(small_sim.test.x), m.predict(small_sim.test.x))
    assert back.chosen_alpha == m.chosen_alpha


def test_rloss_hand_values():
    one = np.array([1.0])
    # y - m = 0.5, w - e = 0.5, tau = 1: exact cancellation
    assert rloss_terms(one, np.array([0.5]), np.array([1.0]), np.array([0.0]), np.array([0.5]))[0] == 0.0
    y, w, m, e = np.array([2.0, -1.0]), np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.array([0.5, 0.5])
    assert rloss_terms(np.zeros(2), y, w, m, e).mean() == pytest.approx(np.mean((y - m) ** 2))
    # a row with y - m = 0 has term ((w - e) tau)^2: doubling tau quadruples it
    args = (np.array([0.5]), np.array([1.0]), np.array([0.5]), np.array([0.25]))
    t1 = rloss_terms(np.array([1.3]), *args)[0]
    t2 = rloss_terms(np.array([2.6]), *args)[0]
    assert t1 > 0 and t2 == pytest.approx(4 * t1)


def test_alpha_one_has_unit_factors_and_matches_plain_lasso(small_sim, nuis):
    from rpretrain.lasso import fit_weighted_lasso

    d = small_sim.train
    m = fit_pretrained_rlasso(d, nuis, alpha_grid=[1.0])
    assert np.all(penalty_weights(np.array([0.0, 2.0]), 1.0).factors == 1.0)
    z, v = pseudo_outcome(d, nuis)
    direct = fit_weighted_lasso(d.x, z, obs_weights=v, lam=m.chosen_lambda2)
    assert np.allclose(direct.coefficients, m.predictor.coefficients, atol=1e-6)


def test_uni_rlasso_alpha_one(small_sim, nuis):
    u = fit_uni_rlasso(small_sim.train, nuis, alpha_grid=[1.0])
    assert u.chosen_alpha == 1.0
