import numpy as np
import pytest

from rpretrain.data import SeededRng
from rpretrain.forest import (ForestParams, fit_forest_rlearner, fit_regression_forest, lasso_prescreen, prescreen,
                              weights_from_importance)
from rpretrain.nuisance import estimate_nuisances

SMALL = ForestParams(n_trees=30, min_leaf=5)


@pytest.fixture(scope="module")
def forest_nuis(small_sim, small_folds):
    d = small_sim.train
    return estimate_nuisances(d, small_folds, "forest", SeededRng(4), e_hat=d.known_propensity, full_fit=False)


def test_forest_is_deterministic_and_learns(gen):
    x = gen.uniform(size=(400, 5))
    y = 3 * (x[:, 0] > 0.5) + 0.1 * gen.standard_normal(400)
    f1 = fit_regression_forest(x, y, params=SMALL, rng=SeededRng(1))
    f2 = fit_regression_forest(x, y, params=SMALL, rng=SeededRng(1))
    assert np.array_equal(f1.predict(x), f2.predict(x))
    assert np.mean((f1.predict(x) - 3 * (x[:, 0] > 0.5)) ** 2) < 0.2
    assert np.argmax(f1.importance) == 0 and f1.importance.sum() == pytest.approx(1.0)


def test_zero_probability_features_are_never_split(gen):
    x = gen.uniform(size=(200, 4))
    y = x[:, 0] + x[:, 3]
    f = fit_regression_forest(x, y, params=SMALL, sampling_probs=np.array([0.0, 0.5, 0.5, 0.0]), rng=SeededRng(2))
    assert set(f.split_features()) <= {1, 2}


def test_honest_leaves_use_held_out_rows(gen):
    x = gen.uniform(size=(300, 3))
    y = x[:, 0] + gen.standard_normal(300)
    f = fit_regression_forest(x, y, params=ForestParams(n_trees=20, honest=True), rng=SeededRng(3))
    assert np.all(np.isfinite(f.predict(x)))


def test_sampling_weight_helpers():
    imp = np.array([0.7, 0.2, 0.1, 0.0])
    assert np.allclose(weights_from_importance(imp, 0.0), 0.25)
    assert np.allclose(weights_from_importance(imp, 1.0), imp)
    assert list(prescreen(imp, 0.15)) == [0, 1]
    with pytest.raises(ValueError):
        prescreen(imp, 0.8)
    with pytest.raises(ValueError):
        weights_from_importance(imp, 1.2)
    lp = lasso_prescreen(np.array([0.0, 1.0, 0.0, -2.0]), 4.0)
    assert np.allclose(lp, np.array([1, 4, 1, 4]) / 10)


def test_strength_zero_equals_plain(small_sim, forest_nuis):
    d = small_sim.train
    plain = fit_forest_rlearner(d, forest_nuis, "plain", rng=SeededRng(9), params=SMALL)
    pt0 = fit_forest_rlearner(d, forest_nuis, "pretrained", grid=[0.0], rng=SeededRng(9), params=SMALL)
    assert np.allclose(plain.predict(small_sim.test.x), pt0.predict(small_sim.test.x))


def test_modes_run_and_select_from_grid(small_sim, forest_nuis):
    d = small_sim.train
    for mode, grid in (("pretrained", [0.0, 0.5]), ("prescreened", [0.0, 0.5])):
        m = fit_forest_rlearner(d, forest_nuis, mode, grid=grid, rng=SeededRng(9), params=SMALL)
        assert m.predict(small_sim.test.x).shape == (small_sim.test.n,)
    with pytest.raises(ValueError):
        fit_forest_rlearner(d, forest_nuis, "bagged", rng=SeededRng(9), params=SMALL)


def test_uniform_probs_equal_default(gen):
    x = gen.uniform(size=(150, 4))
    y = x[:, 0] + gen.standard_normal(150)
    a = fit_regression_forest(x, y, params=SMALL, rng=SeededRng(2))
    b = fit_regression_forest(x, y, params=SMALL, sampling_probs=np.full(4, 0.25), rng=SeededRng(2))
    assert np.array_equal(a.predict(x), b.predict(x))


def test_signal_feature_tops_importance():
    hits = 0
    for r in range(100):
        g = SeededRng(60, (r,)).generator()
        x = g.uniform(size=(200, 5))
        y = x[:, 0] + 0.1 * g.standard_normal(200)
        f = fit_regression_forest(x, y, params=ForestParams(n_trees=20), rng=SeededRng(61, (r,)))
        hits += int(np.argmax(f.importance) == 0)
    assert hits >= 95


def test_one_hot_probs_split_only_that_feature(gen):
    x = gen.uniform(size=(200, 4))
    y = x[:, 0] + x[:, 1]
    f = fit_regression_forest(x, y, params=SMALL, sampling_probs=np.array([0.0, 0.0, 1.0, 0.0]),
                              rng=SeededRng(3))
    assert f.importance[2] == pytest.approx(1.0)


def test_weight_and_prescreen_arithmetic():
    got = weights_from_importance([0.5, 0.5, 0.0, 0.0], 0.5)
    assert np.allclose(got, [0.375, 0.375, 0.125, 0.125])
    assert prescreen([0.1, 0.0, 0.9], 0.0).tolist() == [0, 1, 2]
    assert np.allclose(lasso_prescreen([1.2, 0.0, 0.0], 4.0), [4 / 6, 1 / 6, 1 / 6])
