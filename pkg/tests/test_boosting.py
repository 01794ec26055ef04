import numpy as np
import pytest

from rpretrain.boosting import StumpEnsemble, augmented_design, basis_expand, fit_rboost, fit_stump_boost
from rpretrain.data import SeededRng
from rpretrain.nuisance import estimate_nuisances


def test_single_stump_recovers_a_step(gen):
    x = gen.uniform(size=(300, 3))
    y = np.where(x[:, 1] > 0.6, 2.0, -1.0)
    ens = fit_stump_boost(x, y, M=1, learning_rate=1.0)
    assert ens.features[0] == 1
    assert 0.55 < ens.thresholds[0] < 0.65
    assert np.allclose(ens.predict(x), y)


def test_staged_predict_matches_truncation(gen):
    x = gen.standard_normal((200, 4))
    y = x[:, 0] ** 2 + gen.standard_normal(200)
    ens = fit_stump_boost(x, y, M=40)
    staged = ens.staged_predict(x, (5, 20, 40))
    for col, m in enumerate((5, 20, 40)):
        assert np.allclose(staged[:, col], ens.truncated(m).predict(x))
        assert np.allclose(staged[:, col], ens.predict(x, rounds=m))


def test_constant_targets_stop_immediately(gen):
    x = gen.standard_normal((50, 2))
    ens = fit_stump_boost(x, np.full(50, 3.0), M=20)
    assert ens.M == 0 and np.allclose(ens.predict(x), 3.0)


def test_training_error_decreases(gen):
    x = gen.standard_normal((200, 3))
    y = np.sin(x[:, 0]) + x[:, 1]
    ens = fit_stump_boost(x, y, M=100)
    errs = [np.mean((ens.predict(x, rounds=m) - y) ** 2) for m in (1, 10, 50, 100)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_basis_expand_indicators_and_roundtrip(gen):
    x = gen.standard_normal((100, 3))
    ens = fit_stump_boost(x, x[:, 2] + x[:, 0], M=10)
    b = basis_expand(ens, x)
    assert b.shape == (100, 10) and set(np.unique(b)) <= {0.0, 1.0}
    # the boosted fit is linear in its own basis
    direct = ens.intercept + ens.learning_rate * (ens.left + b * (ens.right - ens.left)).sum(axis=1)
    assert np.allclose(direct, ens.predict(x))
    back = StumpEnsemble.from_dict(ens.to_dict())
    assert np.allclose(back.predict(x), ens.predict(x))


def test_boost_rejects_bad_arguments(gen):
    x = gen.standard_normal((10, 2))
    with pytest.raises(ValueError):
        fit_stump_boost(x, x[:, 0], M=0)
    with pytest.raises(ValueError):
        fit_stump_boost(x, x[:, 0], learning_rate=1.5)


def test_augmented_design_shapes(small_sim, small_folds):
    d = small_sim.train
    exp = augmented_design(d, "m-only", M=20)
    mat = exp.transform(d.x)
    assert mat.shape == (d.n, exp.width) and exp.width == d.p + 20
    assert np.array_equal(mat[:, : d.p], d.x)
    assert not exp.protected.any()
    per_fold = augmented_design(d, "m-only", M=5, folds=small_folds)
    assert len(per_fold) == small_folds.k
    with pytest.raises(ValueError):
        augmented_design(d, "m-and-tau", M=5)


def test_rboost_beats_constant(small_sim, small_folds):
    d, t = small_sim.train, small_sim.test
    nu = estimate_nuisances(d, small_folds, "boost", SeededRng(1), e_hat=d.known_propensity, full_fit=False)
    m = fit_rboost(d, nu, M_grid=(10, 50, 100))
    const = np.mean((t.true_tau - t.true_tau.mean()) ** 2)
    assert np.mean((m.predict(t.x) - t.true_tau) ** 2) < const
    assert m.hyperparameters["M"] in (10, 50, 100)


def test_step_function_single_stump_oracle(gen):
    x = gen.standard_normal((100, 3))
    y = (x[:, 0] > 0).astype(float)
    ens = fit_stump_boost(x, y, M=1, learning_rate=1.0)
    assert ens.features[0] == 0
    lv = ens.intercept + ens.left[0]
    rv = ens.intercept + ens.right[0]
    assert lv == pytest.approx(0.0, abs=1e-12) and rv == pytest.approx(1.0, abs=1e-12)


def test_constant_y_single_round_predicts_mean(gen):
    x = gen.standard_normal((30, 2))
    ens = fit_stump_boost(x, np.full(30, -2.0), M=1)
    assert np.allclose(ens.predict(x), -2.0)


def test_more_rounds_never_hurt_training_fit(gen):
    x = gen.standard_normal((150, 4))
    y = np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2] + gen.standard_normal(150)
    ens = fit_stump_boost(x, y, M=500)
    assert np.mean((ens.predict(x) - y) ** 2) <= np.mean((ens.predict(x, rounds=100) - y) ** 2)


def test_basis_column_values():
    ens = StumpEnsemble(np.array([0]), np.array([0.0]), np.array([-1.0]), np.array([1.0]), 0.1, 0.0)
    b = basis_expand(ens, np.array([[-1.0, 5.0], [2.0, 5.0]]))
    assert b[:, 0].tolist() == [0.0, 1.0]
    dup = StumpEnsemble(np.array([0, 0]), np.array([0.0, 0.0]), np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
                        0.1, 0.0)
    bd = basis_expand(dup, np.array([[-1.0], [2.0]]))
    assert np.array_equal(bd[:, 0], bd[:, 1])


def test_basis_least_squares_refit_reproduces_boosting(gen):
    x = gen.standard_normal((300, 4))
    y = x[:, 0] ** 2 + np.abs(x[:, 1]) + gen.standard_normal(300)
    ens = fit_stump_boost(x, y, M=60)
    a = np.column_stack([np.ones(300), basis_expand(ens, x)])
    fitted = a @ np.linalg.lstsq(a, ens.predict(x), rcond=None)[0]
    target = ens.predict(x)
    r2 = 1 - np.sum((fitted - target) ** 2) / np.sum((target - target.mean()) ** 2)
    assert r2 >= 0.999


def test_m_and_tau_width_protection_and_tags(small_sim, small_folds):
    from rpretrain.boosting import BasisExpansion

    d = small_sim.train
    nu = estimate_nuisances(d, small_folds, "lasso", SeededRng(1), e_hat=d.known_propensity, full_fit=False)
    exp = augmented_design(d, "m-and-tau", M=100, tau_nuisances=nu)
    m_cols, t_cols = exp.ensembles[0].M, exp.ensembles[1].M
    assert exp.width == d.p + m_cols + t_cols
    assert exp.protected.sum() == t_cols and np.all(exp.protected[-t_cols:])
    back = BasisExpansion.from_dict(exp.to_dict())
    assert back.tags == exp.tags
    assert np.array_equal(back.transform(d.x), exp.transform(d.x))


def test_zero_rate_rejected(gen):
    x = gen.standard_normal((10, 2))
    with pytest.raises(ValueError):
        fit_stump_boost(x, x[:, 0], learning_rate=0.0)
