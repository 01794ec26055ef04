import numpy as np
import pytest

from rpretrain.data import Dataset, SeededRng, make_folds
from rpretrain.nuisance import consensus_support, cross_fit_e, cross_fit_m, estimate_nuisances


@pytest.mark.parametrize("learner", ["lasso", "unilasso", "boost", "forest"])
def test_fold_purity(small_sim, small_folds, learner):
    """Rows of fold k are predicted by a model that never saw their outcomes."""
    d = small_sim.train
    params = {"rounds": (10, 20)} if learner == "boost" else {}
    m_hat, *_ = cross_fit_m(d, small_folds, learner, SeededRng(1), **params)
    k = 2
    test = small_folds.test_rows(k)
    y2 = d.y.copy()
    y2[test] += 100.0 * np.arange(1, test.size + 1)
    d2 = Dataset(y2, d.w, d.x, d.known_propensity)
    m2, *_ = cross_fit_m(d2, small_folds, learner, SeededRng(1), **params)
    assert np.array_equal(m_hat[test], m2[test])
    other = small_folds.test_rows(0)
    assert not np.array_equal(m_hat[other], m2[other])


def test_known_propensity_passthrough(small_sim, small_folds):
    e, estimated = cross_fit_e(small_sim.train, small_folds)
    assert not estimated and np.all(e == 0.5)


def test_estimated_propensity_inside_clip(small_folds, small_sim):
    d = small_sim.train
    d2 = Dataset(d.y, d.w, d.x)
    e, estimated = cross_fit_e(d2, small_folds)
    assert estimated and np.all((e >= 0.01) & (e <= 0.99))


def test_estimate_nuisances_full_fit(small_sim, small_folds):
    nu = estimate_nuisances(small_sim.train, small_folds, "lasso", SeededRng(2))
    assert len(nu.m_support_by_fold) == small_folds.k
    assert nu.m_coefficients_full is not None
    # a strong-signal design: the full-data lasso keeps every true mean-outcome feature
    assert set(small_sim.truth.m_support) <= set(nu.m_support_full)


def test_constant_outcome_selects_nothing(small_folds, small_sim):
    d = small_sim.train
    d2 = Dataset(np.full(d.n, 3.0), d.w, d.x, d.known_propensity)
    nu = estimate_nuisances(d2, small_folds, "lasso", SeededRng(2))
    assert np.all(nu.m_hat == 3.0)
    assert all(s.size == 0 for s in nu.m_support_by_fold)


def test_consensus_rules():
    s = [np.array([0, 1, 2]), np.array([1, 2, 3])]
    assert list(consensus_support(s, "union")) == [0, 1, 2, 3]
    assert list(consensus_support(s, "intersection")) == [1, 2]
    assert consensus_support(s, "per-fold") is s or len(consensus_support(s, "per-fold")) == 2
    with pytest.raises(ValueError):
        consensus_support(s, "majority")


def test_noiseless_feature_in_every_fold_support():
    for r in range(50):
        g = np.random.default_rng(300 + r)
        x = g.standard_normal((100, 8))
        w = np.r_[np.zeros(50), np.ones(50)]
        d = Dataset(x[:, 0].copy(), w, x, known_propensity=np.full(100, 0.5))
        folds = make_folds(d.n, 5, d.w, SeededRng(r))
        _, supports, *_ = cross_fit_m(d, folds, "lasso", SeededRng(r))
        assert all(0 in s for s in supports)


def test_same_seed_same_m_hat(small_sim, small_folds):
    a, *_ = cross_fit_m(small_sim.train, small_folds, "forest", SeededRng(5))
    b, *_ = cross_fit_m(small_sim.train, small_folds, "forest", SeededRng(5))
    assert np.array_equal(a, b)


def test_confounded_propensity_is_estimated_well():
    from rpretrain.dgp import DgpSpec, simulate

    sim = simulate(DgpSpec("setupD", n=2000, p=10, n_test=10), SeededRng(6))
    d = sim.train
    folds = make_folds(d.n, 5, d.w, SeededRng(7))
    e, estimated = cross_fit_e(d, folds)
    assert estimated
    assert np.mean(np.abs(e - sim.truth.true_propensity)) < 0.1


def test_consensus_degenerate_cases():
    same = [np.array([2, 4]), np.array([2, 4])]
    assert list(consensus_support(same, "union")) == list(consensus_support(same, "intersection")) == [2, 4]
    empty = [np.array([], dtype=int), np.array([], dtype=int)]
    assert consensus_support(empty, "union").size == 0
