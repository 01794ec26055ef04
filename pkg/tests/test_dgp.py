import numpy as np
import pytest

from rpretrain.data import SeededRng
from rpretrain.dgp import DgpSpec, setup_functions, simulate, support_layout


def test_support_layout_overlap():
    m, t = support_layout(30, 10, 0.5)
    assert list(m) == list(range(10))
    assert len(np.intersect1d(m, t)) == 5 and t.size == 10
    m, t = support_layout(30, 10, 0.0)
    assert len(np.intersect1d(m, t)) == 0
    m, t = support_layout(30, 10, 1.0)
    assert np.array_equal(m, t)
    with pytest.raises(ValueError):
        support_layout(15, 10, 0.0)


def test_setup_functions_at_reference_points():
    ones = np.ones((1, 10))
    zeros = np.zeros((1, 10))
    _, tau, e = setup_functions("A", ones)
    assert tau[0] == pytest.approx(1.0) and e[0] == 0.5
    mu0, tau, _ = setup_functions("B", zeros)
    assert mu0[0] == pytest.approx(0.0) and tau[0] == pytest.approx(np.log(5.0))
    _, tau, _ = setup_functions("C", zeros)
    assert tau[0] == pytest.approx(0.0)
    _, _, e = setup_functions("D", zeros)
    assert e[0] == pytest.approx(1 / 3)


def test_setup_d_has_no_known_propensity():
    sim = simulate(DgpSpec("setupD", n=200, p=10, n_test=50), SeededRng(0))
    assert sim.train.known_propensity is None
    assert sim.truth.true_propensity.shape == (200,)


@pytest.mark.parametrize("family", ["linear_overlap", "correlated_sparse"])
def test_snr_convention(family):
    # signal variance / noise variance matches the requested SNR
    spec = DgpSpec(family, n=20000, p=30, snr=2.0, overlap_fraction=0.5, n_test=10)
    sim = simulate(spec, SeededRng(1))
    d = sim.train
    tr = sim.truth
    signal = spec.beta0 + d.x @ tr.beta + d.w * d.true_tau
    noise = d.y - signal
    assert signal.var() / noise.var() == pytest.approx(2.0, rel=0.05)


def test_correlated_design_is_toeplitz():
    spec = DgpSpec("correlated_sparse", n=20000, p=6, rho=0.5, sparsity=0.5, n_test=10)
    x = simulate(spec, SeededRng(2)).train.x
    c = np.corrcoef(x.T)
    assert c[0, 1] == pytest.approx(0.5, abs=0.03) and c[0, 2] == pytest.approx(0.25, abs=0.03)


def test_simulation_is_reproducible():
    spec = DgpSpec("linear_overlap", n=50, p=9)
    a, b = simulate(spec, SeededRng(3)), simulate(spec, SeededRng(3))
    assert np.array_equal(a.train.y, b.train.y) and np.array_equal(a.test.x, b.test.x)


def test_effect_scale_zero_gives_constant_effect():
    sim = simulate(DgpSpec("linear_overlap", n=50, p=9, effect_scale=0.0, theta0=1.0), SeededRng(4))
    assert np.all(sim.train.true_tau == 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        DgpSpec("mystery", n=10, p=3)
    with pytest.raises(ValueError):
        DgpSpec("linear_overlap", n=10, p=3, overlap_fraction=1.5)


def test_toeplitz_entries_and_empirical_correlation():
    from rpretrain.dgp import toeplitz_covariance

    s = toeplitz_covariance(3, 0.5)
    assert s[0, 1] == 0.5 and s[0, 2] == 0.25 and np.all(np.diag(s) == 1)
    sim = simulate(DgpSpec("correlated_sparse", n=10000, p=5, n_test=10), SeededRng(9))
    r = np.corrcoef(sim.train.x[:, 0], sim.train.x[:, 1])[0, 1]
    assert abs(r - 0.5) < 0.03


def test_sparsity_sets_support_size_and_default_offsets():
    spec = DgpSpec("correlated_sparse", n=50, p=500, sparsity=0.1, n_test=10)
    sim = simulate(spec, SeededRng(1))
    assert sim.truth.m_support.size == 50 and sim.truth.tau_support.size == 50
    assert spec.beta0 == 0.0 and spec.theta0 == 0.0
