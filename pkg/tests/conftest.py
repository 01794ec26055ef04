import numpy as np
import pytest

from rpretrain.data import SeededRng, make_folds
from rpretrain.dgp import DgpSpec, simulate


@pytest.fixture(scope="session")
def small_sim():
    """A small linear shared-support draw used across modules."""
    spec = DgpSpec("linear_overlap", n=200, p=21, snr=2.0, overlap_fraction=1.0, n_test=400)
    return simulate(spec, SeededRng(11))


@pytest.fixture(scope="session")
def small_folds(small_sim):
    d = small_sim.train
    return make_folds(d.n, 5, d.w, SeededRng(11, (1,)))


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: simulation-backed acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
