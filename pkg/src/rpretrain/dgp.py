"""Simulation designs: linear shared-support, correlated sparse (Toeplitz),
and the four non-linear setups A-D. Each draw keeps the oracle effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy.linalg import toeplitz

from .data import Dataset, as_rng

FAMILIES = ("linear_overlap", "correlated_sparse", "setupA", "setupB", "setupC", "setupD")


@dataclass(frozen=True)
class DgpSpec:
    family: str
    n: int
    p: int
    snr: float = 2.0
    sparsity: float = 1 / 3
    overlap_fraction: float = 0.0
    seed: int = 0
    beta0: float = 0.0
    theta0: float = 0.0
    rho: float = 0.5
    effect_scale: float = 1.0  # 0 gives a constant effect theta0
    n_test: int = 1000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown DGP family {self.family!r}")
        if self.n < 2 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.snr <= 0:
            raise ValueError("snr must be > 0")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must lie in (0, 1]")
        if not 0 <= self.overlap_fraction <= 1:
            raise ValueError("overlap_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Truth:
    """Oracle structure behind a simulated dataset."""

    m_support: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    tau_support: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    beta: np.ndarray | None = None
    theta: np.ndarray | None = None
    true_propensity: np.ndarray | None = None


@dataclass
class Simulation:
    train: Dataset
    test: Dataset
    truth: Truth


def support_layout(p: int, size: int, overlap_fraction: float):
    """Indices of the m- and tau-supports: shared indices first, then disjoint blocks."""
    size = max(1, int(size))
    shared = int(math.floor(overlap_fraction * size + 1e-9))
    if 2 * size - shared > p:
        raise ValueError(f"p={p} too small for two supports of size {size} with {shared} shared")
    m_sup = np.arange(size)
    tau_sup = np.concatenate([np.arange(shared), np.arange(size, 2 * size - shared)])
    return m_sup, tau_sup


class _Linear:
    def __init__(self, spec: DgpSpec, gen: np.random.Generator, size: int, correlated: bool):
        p = spec.p
        self.spec = spec
        self.m_sup, self.tau_sup = support_layout(p, size, spec.overlap_fraction)
        self.beta = np.zeros(p)
        self.theta = np.zeros(p)
        self.beta[self.m_sup] = gen.uniform(0.5, 1.0, self.m_sup.size)
        self.theta[self.tau_sup] = gen.uniform(1.0, 2.0, self.tau_sup.size) * spec.effect_scale
        self.chol = None
        if correlated:
            sigma = toeplitz(spec.rho ** np.arange(p))
            self.chol = np.linalg.cholesky(sigma)

    def covariates(self, n, gen):
        z = gen.standard_normal((n, self.spec.p))
        return z if self.chol is None else z @ self.chol.T

    def sample(self, n, gen) -> Dataset:
        s = self.spec
        x = self.covariates(n, gen)
        w = gen.binomial(1, 0.5, n).astype(float)
        _ensure_both_arms(w, gen)
        tau = s.theta0 + x @ self.theta
        mu = s.beta0 + x @ self.beta + w * tau
        eps = gen.normal(0.0, math.sqrt(mu.var() / s.snr) if mu.var() > 0 else 1.0, n)
        return Dataset(mu + eps, w, x, known_propensity=np.full(n, 0.5), true_tau=tau)


def _ensure_both_arms(w, gen):
    if w.sum() == 0:
        w[gen.integers(w.size)] = 1.0
    elif w.sum() == w.size:
        w[gen.integers(w.size)] = 0.0


def _linear(spec: DgpSpec, gen, correlated: bool) -> Simulation:
    if spec.p < 3:
        raise ValueError("linear designs need p >= 3")
    if correlated:
        size = int(math.floor(spec.sparsity * spec.p + 1e-9))
    else:
        size = spec.p // 3
    model = _Linear(spec, gen, size, correlated)
    train = model.sample(spec.n, gen)
    test = model.sample(spec.n_test, gen)
    truth = Truth(model.m_sup, model.tau_sup, model.beta, model.theta)
    return Simulation(train, test, truth)


# -- non-linear setups ------------------------------------------------------------

def setup_functions(which: str, x: np.ndarray):
    """Baseline mu0(x), effect tau(x) and propensity e(x) for setups A-D."""
    x = np.atleast_2d(x)
    X = lambda j: x[:, j - 1]  # noqa: E731 - 1-based like the design formulas
    pos = lambda a: np.maximum(0.0, a)  # noqa: E731
    n = x.shape[0]
    half = np.full(n, 0.5)
    if which == "A":
        mu0 = np.sin(np.pi * X(1) * X(2)) + 2 * (X(3) - 0.5) ** 2 + X(4) ** 3 + 0.5 * X(5) ** 3
        tau = (X(1) + X(2) + X(3) + X(4) + X(5)) / 5
        return mu0, tau, half
    if which == "B":
        mu0 = (np.maximum.reduce([np.zeros(n), X(1) ** 2 + X(2) ** 2, X(3) ** 2]) + pos(X(4) ** 2 + X(5) ** 2)
               + X(6) ** 2 + X(7) ** 2)
        tau = X(1) ** 2 + np.log1p(np.exp(X(2)) + np.exp(X(3)) + np.exp(X(4)) + np.exp(X(5)))
        return mu0, tau, half
    if which == "C":
        mu0 = (X(1) + X(2) + X(3) + X(4) + X(5)) / 5 + 0.8 * (X(6) + X(7))
        # printed formula leaves the first max unclosed; it is closed after X3
        tau = pos(X(1) + X(2) + X(3)) + pos(X(4) ** 2 + X(5) ** 2) + X(6) ** 2 + X(7) ** 2 + 0.5 * (X(8) + X(9))
        return mu0, tau, half
    if which == "D":
        mu0 = (pos(X(1) + X(2) + X(3)) + pos(X(4) + X(5))) / 2 + X(6) ** 2 + X(7) ** 2
        tau = pos(X(1) + X(2) + X(3)) - pos(X(4) + X(5)) + X(9) ** 2 + X(10) ** 2
        e = 1.0 / (1.0 + np.exp(-X(1)) + np.exp(-X(2)))
        return mu0, tau, e
    raise ValueError(f"unknown setup {which!r}")


_SETUP_ARITY = {"A": 5, "B": 7, "C": 9, "D": 10}
_SETUP_SUPPORT = {
    "A": (np.arange(5), np.arange(5)),
    "B": (np.arange(7), np.arange(5)),
    "C": (np.arange(7), np.arange(9)),
    "D": (np.arange(7), np.array([0, 1, 2, 3, 4, 8, 9])),
}


def _setup_sample(which, n, p, snr, gen) -> tuple[Dataset, np.ndarray]:
    x = gen.standard_normal((n, p))
    mu0, tau, e = setup_functions(which, x)
    w = gen.binomial(1, e).astype(float)
    _ensure_both_arms(w, gen)
    signal = mu0 + w * tau
    eps = gen.normal(0.0, math.sqrt(signal.var() / snr), n)
    known = e if which != "D" else None
    return Dataset(signal + eps, w, x, known_propensity=known, true_tau=tau), e


def gen_setup(which: str, n: int, p: int, snr: float, rng=None, n_test: int = 1000) -> Simulation:
    if which not in _SETUP_ARITY:
        raise ValueError(f"unknown setup {which!r}")
    if p < _SETUP_ARITY[which] or p < 10:
        raise ValueError(f"setup {which} needs p >= {max(10, _SETUP_ARITY[which])}")
    gen = as_rng(rng).generator()
    train, e_train = _setup_sample(which, n, p, snr, gen)
    test, _ = _setup_sample(which, n_test, p, snr, gen)
    m_sup, tau_sup = _SETUP_SUPPORT[which]
    return Simulation(train, test, Truth(m_sup, tau_sup, true_propensity=e_train))


def simulate(spec: DgpSpec, rng=None) -> Simulation:
    """Draw one replication (training set, test set, oracle) from ``spec``."""
    rng = as_rng(rng if rng is not None else spec.seed)
    if spec.family.startswith("setup"):
        return gen_setup(spec.family[-1], spec.n, spec.p, spec.snr, rng, spec.n_test)
    gen = rng.generator()
    return _linear(spec, gen, correlated=spec.family == "correlated_sparse")


def gen_linear_overlap(spec: DgpSpec, rng=None) -> Dataset:
    if spec.family != "linear_overlap":
        raise ValueError("spec.family must be 'linear_overlap'")
    return simulate(spec, rng).train


def gen_correlated_sparse(spec: DgpSpec, rng=None) -> Dataset:
    if spec.family != "correlated_sparse":
        raise ValueError("spec.family must be 'correlated_sparse'")
    return simulate(spec, rng).train


def toeplitz_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    return toeplitz(rho ** np.arange(p))
