"""Weighted penalized regression by cyclic coordinate descent.

Objective for the gaussian lasso, with raw observation weights ``v``::

    (1 / 2n) * sum_i v_i (y_i - b0 - x_i'b)^2 + lam * sum_j f_j |b_j|

Columns are centered (weighted) and, by default, scaled to unit weighted
standard deviation before the penalty factors ``f_j`` apply; coefficients
are reported on the original scale. A factor of ``+inf`` excludes a column.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._cd import cd_path
from .data import FoldAssignment, make_folds, as_rng

log = logging.getLogger(__name__)

TOL = 1e-7
MAX_SWEEPS = 1000
FDEV = 1e-5  # early path stop for CV curves only
CV_TOL = 1e-5  # out-of-fold prediction paths; returned fits use TOL


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    """Per-feature penalty factors plus the pretraining strength that built them."""

    factors: np.ndarray
    alpha_strength: float = 1.0
    protected: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=float).ravel()
        if np.any(np.isnan(f)) or np.any(f < 0):
            raise ValueError("penalty factors must be nonnegative (inf allowed)")
        object.__setattr__(self, "factors", f)
        if not 0 < self.alpha_strength <= 1:
            raise ValueError("alpha_strength must lie in (0, 1]")
        prot = np.zeros(f.size, dtype=bool) if self.protected is None else np.asarray(self.protected, dtype=bool)
        if prot.size != f.size:
            raise ValueError("protected mask has the wrong length")
        if np.any(f[prot] != 1.0):
            raise ValueError("protected features must carry factor 1")
        object.__setattr__(self, "protected", prot)

    @classmethod
    def uniform(cls, p: int) -> "PenaltySpec":
        return cls(np.ones(p))

    @property
    def p(self) -> int:
        return self.factors.size

    def scaled(self, c: float) -> "PenaltySpec":
        f = self.factors * c
        prot = self.protected if c == 1 else np.zeros(self.p, dtype=bool)
        return PenaltySpec(f, self.alpha_strength, prot)


@dataclass
class FitResult:
    intercept: float
    coefficients: np.ndarray
    lam: float
    objective_value: float
    active_set: np.ndarray = field(init=False)
    converged: bool = True
    sweeps: int = 0

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.active_set = np.flatnonzero(self.coefficients != 0)

    def predict(self, x) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.coefficients


@dataclass
class CvResult:
    lambda_grid: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    fit_at_min: FitResult
    index_min: int = 0


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def _duplicate_columns(G, inert, tol=1e-10):
    """For each column, the index of an earlier identical (|corr| = 1) column, else -1.

    Returns None when there are no duplicates.
    """
    d = np.sqrt(np.clip(np.diag(G), 0.0, None))
    ok = (d > 0) & ~inert
    if ok.sum() < 2:
        return None
    idx = np.flatnonzero(ok)
    corr = np.abs(G[np.ix_(idx, idx)]) / np.outer(d[idx], d[idx])
    hit = np.tril(corr > 1 - tol, -1)
    if not hit.any():
        return None
    dup_of = np.full(G.shape[0], -1)
    for a in np.flatnonzero(hit.any(axis=1)):
        first = idx[np.flatnonzero(hit[a])[0]]
        dup_of[idx[a]] = dup_of[first] if dup_of[first] >= 0 else first
    return dup_of


class Problem:
    """A weighted least-squares problem reduced to its Gram form.

    Holds the centering/scaling used for the penalty so the same design can be
    solved for many penalty-factor vectors and lambdas without re-forming the
    Gram matrix.
    """

    def __init__(self, x, y, obs_weights=None, standardize=True, std_weights=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        n, p = x.shape
        v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float).ravel()
        if v.shape[0] != n or y.shape[0] != n:
            raise ValueError("x, y and obs_weights disagree in length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
            raise ValueError("non-finite input to lasso")
        if np.any(v < 0) or v.sum() <= 0:
            raise ValueError("observation weights must be nonnegative with positive sum")
        self.n, self.p = n, p
        self.v = v
        vsum = v.sum()
        self.x_mean = v @ x / vsum
        self.y_mean = float(v @ y / vsum)
        xc = x - self.x_mean
        if standardize:
            sv = v if std_weights is None else np.asarray(std_weights, dtype=float)
            var = sv @ (xc**2) / sv.sum()
            scale = np.sqrt(var)
        else:
            scale = np.sqrt(v @ (xc**2) / vsum)
        # columns that are constant (under the weights) are inert
        self.inert = scale <= 1e-12 * np.maximum(1.0, np.abs(self.x_mean))
        if standardize:
            self.scale = np.where(self.inert, 1.0, scale)
        else:
            self.scale = np.ones(p)
        xs = xc / self.scale
        xs[:, self.inert] = 0.0
        yc = y - self.y_mean
        xv = xs * v[:, None]
        self.G = np.ascontiguousarray(xv.T @ xs / n)
        self.c = xv.T @ yc / n
        self.null_rss = float(v @ yc**2)
        self.dup_of = _duplicate_columns(self.G, self.inert)

    def _factors(self, factors):
        f = np.asarray(factors, dtype=float).copy()
        if f.size != self.p:
            raise ValueError(f"expected {self.p} penalty factors, got {f.size}")
        f[self.inert] = np.inf
        if self.dup_of is not None:
            # identical columns: only the least-penalized copy may enter
            for rep in np.unique(self.dup_of[self.dup_of >= 0]):
                group = np.concatenate([[rep], np.flatnonzero(self.dup_of == rep)])
                keep = group[np.argmin(f[group])]
                f[group[group != keep]] = np.inf
        return f

    def lambda_max(self, factors, nonneg=False) -> float:
        f = self._factors(factors)
        free = np.flatnonzero(f == 0)
        c = self.c
        if free.size:
            # unpenalized columns enter at every lambda; measure correlations after them
            sol = np.linalg.lstsq(self.G[np.ix_(free, free)], c[free], rcond=None)[0]
            c = c - self.G[:, free] @ sol
        pen = np.isfinite(f) & (f > 0)
        if not pen.any():
            if free.size:
                return 0.0
            raise ValueError("all features are excluded by the penalty")
        num = c[pen] if nonneg else np.abs(c[pen])
        return float(np.max(np.maximum(num, 0.0) / f[pen]))

    def lambda_grid(self, factors, n_lambda=100, ratio=None, nonneg=False) -> np.ndarray:
        if n_lambda < 2:
            raise ValueError("n_lambda must be >= 2")
        if ratio is None:
            ratio = 0.01 if self.n > self.p else 0.05
        if not 0 < ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        lmax = self.lambda_max(factors, nonneg)
        if lmax <= 0:
            lmax = 1e-8
        return np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_lambda))

    def solve_path(self, factors, lambdas, nonneg=False, tol=TOL, max_sweeps=MAX_SWEEPS, beta_init=None,
                   early_stop=False):
        f = self._factors(factors)
        lambdas = np.asarray(lambdas, dtype=float).ravel()
        if np.any(lambdas < 0):
            raise ValueError("lambda must be nonnegative")
        b0 = np.zeros(self.p) if beta_init is None else np.asarray(beta_init, dtype=float).copy()
        # tolerance is relative to the outcome scale so it is unit-free
        ysd = math.sqrt(self.null_rss / self.n) if self.null_rss > 0 else 1.0
        path, sweeps, conv = cd_path(self.G, self.c, f, lambdas, bool(nonneg), float(tol) * ysd,
                                     int(max_sweeps), b0, self.null_rss / self.n, FDEV if early_stop else 0.0)
        if not conv.all():
            warnings.warn(f"coordinate descent hit {max_sweeps} sweeps without converging", ConvergenceWarning,
                          stacklevel=2)
        return path, sweeps, conv

    def to_original(self, beta_std):
        beta_std = np.atleast_2d(beta_std)
        coef = beta_std / self.scale
        intercept = self.y_mean - coef @ self.x_mean
        return intercept, coef

    def objective(self, beta_std, lam, factors) -> float:
        f = self._factors(factors)
        quad = 0.5 * beta_std @ self.G @ beta_std - self.c @ beta_std + 0.5 * self.null_rss / self.n
        pen = np.where(np.isfinite(f), f, 0.0) @ np.abs(beta_std)
        return float(quad + lam * pen)

    def fit_result(self, beta_std, lam, factors, converged=True, sweeps=0) -> FitResult:
        b0, coef = self.to_original(beta_std)
        return FitResult(
            intercept=float(b0[0]),
            coefficients=coef[0],
            lam=float(lam),
            objective_value=self.objective(beta_std, lam, factors),
            converged=bool(converged),
            sweeps=int(sweeps),
        )


def _factors_of(penalty, p):
    if penalty is None:
        return np.ones(p)
    if isinstance(penalty, PenaltySpec):
        return penalty.factors
    return np.asarray(penalty, dtype=float)


def fit_weighted_lasso(x, y, obs_weights=None, penalty=None, lam=0.0, *, standardize=True,
                       nonneg=False, tol=TOL, max_sweeps=MAX_SWEEPS) -> FitResult:
    """Fit the weighted lasso at a single ``lam``.

    The solution is computed along a short warm-start path from ``lambda_max``
    down to ``lam``, which is both faster and more stable than a cold start.
    """
    prob = Problem(x, y, obs_weights, standardize)
    f = _factors_of(penalty, prob.p)
    lmax = prob.lambda_max(f, nonneg)
    if lam < lmax:
        lams = np.geomspace(lmax, max(lam, lmax * 1e-4), 20)
        lams = np.append(lams, lam)
    else:
        lams = np.array([lam])
    path, sweeps, conv = prob.solve_path(f, lams, nonneg, tol, max_sweeps)
    return prob.fit_result(path[-1], lam, f, conv[-1], sweeps.sum())


def lambda_path(x, y, obs_weights=None, penalty=None, n_lambda=100, ratio=None, *,
                standardize=True, nonneg=False) -> np.ndarray:
    prob = Problem(x, y, obs_weights, standardize)
    return prob.lambda_grid(_factors_of(penalty, prob.p), n_lambda, ratio, nonneg)


def kkt_residual(x, y, obs_weights, penalty, fit: FitResult, *, standardize=True, nonneg=False) -> float:
    """Largest violation of the lasso optimality conditions (standardized scale).

    For inactive j: ``|x_j' V r / n| <= lam f_j``; for active j:
    ``x_j' V r / n = lam f_j sign(b_j)``. Returns the maximum excess.
    """
    prob = Problem(x, y, obs_weights, standardize)
    f = prob._factors(_factors_of(penalty, prob.p))
    beta = fit.coefficients * prob.scale
    grad = prob.c - prob.G @ beta
    worst = 0.0
    for j in range(prob.p):
        if not np.isfinite(f[j]):
            continue
        bound = fit.lam * f[j]
        if beta[j] != 0:
            worst = max(worst, abs(grad[j] - bound * np.sign(beta[j])))
        elif nonneg:
            worst = max(worst, grad[j] - bound)
        else:
            worst = max(worst, abs(grad[j]) - bound)
    return float(worst)


# -- cross-validation ---------------------------------------------------------

def oof_path_predictions(x, y, obs_weights, folds: FoldAssignment, lambdas, fold_factors, *,
                         standardize=True, nonneg=False, problems=None, designs=None):
    """Out-of-fold predictions for every lambda on the grid.

    ``fold_factors[k]`` is the penalty-factor vector used when fold ``k`` is
    held out. ``designs[k]``, if given, replaces ``x`` for fold ``k`` (same
    width, e.g. features built on that fold's training rows only).
    ``problems`` optionally caches the per-fold :class:`Problem`. Fold paths
    use the looser ``CV_TOL`` and stop early once the fit saturates (the tail
    repeats the last solution). Returns an ``n x L`` matrix.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    out = np.empty((n, len(lambdas)))
    for k, train, test in folds.splits():
        xk = x if designs is None else np.asarray(designs[k], dtype=float)
        if problems is not None and k in problems:
            prob = problems[k]
        else:
            prob = Problem(xk[train], y[train], v[train], standardize)
            if problems is not None:
                problems[k] = prob
        path, _, _ = prob.solve_path(fold_factors[k], lambdas, nonneg, tol=CV_TOL, early_stop=True)
        b0, coef = prob.to_original(path)
        out[test] = xk[test] @ coef.T + b0
    return out


def _cv_stats(resid_sq, v, folds):
    """Pooled weighted CV error per lambda and its across-fold standard error."""
    per_fold = []
    for k in range(folds.k):
        rows = folds.fold_of == k
        per_fold.append(v[rows] @ resid_sq[rows] / v[rows].sum())
    per_fold = np.asarray(per_fold)
    mean = v @ resid_sq / v.sum()
    se = per_fold.std(axis=0, ddof=1) / np.sqrt(folds.k) if folds.k > 1 else np.zeros_like(mean)
    return mean, se


def cv_weighted_lasso(x, y, obs_weights=None, penalty=None, folds: FoldAssignment | None = None, *,
                      n_lambda=100, ratio=None, standardize=True, nonneg=False, fold_factors=None,
                      rng=None) -> CvResult:
    """Choose lambda by K-fold weighted out-of-fold squared error, then refit.

    Ties on the CV curve resolve to the larger lambda.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = x.shape[0]
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    if folds is None:
        folds = _plain_folds(n, 5, rng)
    full = Problem(x, y, v, standardize)
    f = _factors_of(penalty, full.p)
    lambdas = full.lambda_grid(f, n_lambda, ratio, nonneg)
    ff = fold_factors if fold_factors is not None else [f] * folds.k
    pred = oof_path_predictions(x, y, v, folds, lambdas, ff, standardize=standardize, nonneg=nonneg)
    mean, se = _cv_stats((y[:, None] - pred) ** 2, v, folds)
    i = int(np.argmin(mean))
    path, sweeps, conv = full.solve_path(f, lambdas[: i + 1], nonneg)
    fit = full.fit_result(path[-1], lambdas[i], f, conv[-1], sweeps.sum())
    return CvResult(lambdas, mean, se, float(lambdas[i]), fit, i)


def _plain_folds(n, k, rng):
    gen = as_rng(rng).generator()
    fold_of = np.empty(n, dtype=int)
    fold_of[gen.permutation(n)] = np.arange(n) % k
    return FoldAssignment(fold_of, k)


def inner_folds(n, k, w, rng) -> FoldAssignment:
    """Folds for a nested fit: arm-stratified when possible."""
    try:
        return make_folds(n, k, w, rng)
    except ValueError:
        return _plain_folds(n, k, rng)


# -- logistic lasso -------------------------------------------------------------

def _sigmoid(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _logistic_path(x, w, factors, lambdas, std_weights=None, max_irls=25, irls_tol=1e-6):
    """IRLS along a lambda path; each Newton step is a weighted lasso.

    Returns intercepts, coefficients and the index where the path was cut
    because the fit started to diverge (separation), or ``len(lambdas)``.
    """
    n, p = x.shape
    std_w = np.ones(n) if std_weights is None else std_weights
    ints = np.zeros(len(lambdas))
    coefs = np.zeros((len(lambdas), p))
    wbar = float(np.clip(w.mean(), 1e-6, 1 - 1e-6))
    b0 = np.log(wbar / (1 - wbar))
    b = np.zeros(p)
    cut = len(lambdas)
    for li, lam in enumerate(lambdas):
        for _ in range(max_irls):
            eta = b0 + x @ b
            mu = _sigmoid(eta)
            vw = np.clip(mu * (1 - mu), 1e-5, None)
            z = eta + (w - mu) / vw
            prob = Problem(x, z, vw, True, std_weights=std_w)
            path, _, _ = prob.solve_path(factors, [lam], beta_init=b * prob.scale)
            nb0, ncoef = prob.to_original(path)
            nb0, ncoef = float(nb0[0]), ncoef[0]
            delta = np.max(np.abs(x @ (ncoef - b) + (nb0 - b0)))
            b0, b = nb0, ncoef
            if delta < irls_tol:
                break
        if not np.all(np.isfinite(b)) or np.max(np.abs(b), initial=0.0) > 1e4 or abs(b0) > 1e4:
            cut = li
            break
        ints[li], coefs[li] = b0, b
    return ints, coefs, cut


def fit_logistic_lasso_cv(x, w, folds: FoldAssignment | None = None, *, penalty=None, n_lambda=50,
                          ratio=None, clip=(0.01, 0.99), rng=None) -> CvResult:
    """Penalized logistic regression with lambda chosen by out-of-fold deviance.

    A path that begins to diverge (perfect separation) is truncated there, so
    the heavier lambdas remain the only candidates; the truncation is logged.
    The returned fit exposes ``predict_proba`` clipped to ``clip``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    n, p = x.shape
    if w.min() == w.max():
        raise ValueError("logistic lasso needs both classes")
    if folds is None:
        folds = inner_folds(n, 5, w, rng)
    f = _factors_of(penalty, p)
    wbar = w.mean()
    # lambda_max at the intercept-only fit, on the unweighted-standardized scale
    scale = np.sqrt(((x - x.mean(0)) ** 2).mean(0))
    pen = np.isfinite(f) & (f > 0) & (scale > 1e-12)
    grad = np.abs((x - x.mean(0)).T @ (w - wbar) / n) / np.where(scale > 0, scale, 1.0)
    lmax = float(np.max(grad[pen] / f[pen])) if pen.any() else 1.0
    ratio = ratio if ratio is not None else (0.01 if n > p else 0.05)
    lambdas = np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_lambda))

    dev = np.full((n, n_lambda), np.nan)
    usable = n_lambda
    for k, train, test in folds.splits():
        ints, coefs, cut = _logistic_path(x[train], w[train], f, lambdas)
        usable = min(usable, cut)
        eta = x[test] @ coefs.T + ints
        mu = np.clip(_sigmoid(eta), 1e-5, 1 - 1e-5)
        dev[test] = -2 * (w[test, None] * np.log(mu) + (1 - w[test, None]) * np.log(1 - mu))
    if usable < n_lambda:
        log.info("logistic path truncated at %d/%d lambdas (separation)", usable, n_lambda)
    usable = max(usable, 1)
    mean, se = _cv_stats(dev[:, :usable], np.ones(n), folds)
    i = int(np.argmin(mean))
    ints, coefs, cut = _logistic_path(x, w, f, lambdas[: i + 1])
    j = min(i, cut - 1) if cut > 0 else 0
    fit = LogisticFit(
        intercept=float(ints[j]),
        coefficients=coefs[j],
        lam=float(lambdas[j]),
        objective_value=float("nan"),
        clip=clip,
    )
    return CvResult(lambdas[:usable], mean, se, float(lambdas[j]), fit, j)


@dataclass
class LogisticFit(FitResult):
    clip: tuple = (0.01, 0.99)

    def predict_proba(self, x) -> np.ndarray:
        return np.clip(_sigmoid(self.predict(x)), *self.clip)


# -- UniLasso ---------------------------------------------------------------------

def univariate_fits(x, y, obs_weights, folds: FoldAssignment):
    """Per-feature weighted simple regressions.

    Returns ``(F, a, b)``: leave-fold-out fitted values ``F[i, j]`` (row i
    predicted by the fit that excluded its fold) and full-data intercepts
    ``a`` and slopes ``b``. Features constant on the full data get slope 0
    and an all-zero column in ``F``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)

    def simple(xs, ys, vs):
        vs = vs / vs.sum()
        mx = vs @ xs
        my = vs @ ys
        xc = xs - mx
        sxx = vs @ xc**2
        sxy = vs @ (xc * (ys - my)[:, None])
        flat = sxx <= 1e-12 * np.maximum(1.0, mx**2)
        slope = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
        return my - slope * mx, slope

    a, b = simple(x, y, v)
    F = np.empty((n, p))
    for k, train, test in folds.splits():
        ak, bk = simple(x[train], y[train], v[train])
        F[test] = ak + x[test] * bk
    dead = b == 0
    F[:, dead] = 0.0
    return F, a, b


def unilasso_from_stage2(gamma0, gamma, a, b, lam, objective=float("nan")) -> FitResult:
    coef = gamma * b
    return FitResult(float(gamma0 + gamma @ a), coef, float(lam), objective)


def fit_unilasso(x, y, folds: FoldAssignment | None = None, *, obs_weights=None, penalty=None,
                 n_lambda=100, ratio=None, standardize_stage2=False, rng=None) -> FitResult:
    """Univariate-guided lasso: nonnegative lasso on leave-fold-out univariate fits.

    Final coefficients are ``gamma_j * b_j`` so every selected feature keeps the
    sign of its univariate slope. ``penalty`` factors multiply the stage-2
    penalty. Lambda is chosen by CV on the same folds as stage 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if folds is None:
        folds = _plain_folds(n, 5, rng)
    if n < 2 * folds.k:
        raise ValueError("UniLasso needs n >= 2K")
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    F, a, b = univariate_fits(x, y, v, folds)
    f = _factors_of(penalty, p).copy()
    f[b == 0] = np.inf
    if not np.any(np.isfinite(f)):
        return FitResult(float(v @ y / v.sum()), np.zeros(p), 0.0, float("nan"))
    cv = cv_weighted_lasso(F, y, v, f, folds, n_lambda=n_lambda, ratio=ratio,
                           standardize=standardize_stage2, nonneg=True)
    g = cv.fit_at_min
    return unilasso_from_stage2(g.intercept, g.coefficients, a, b, cv.lambda_min, g.objective_value)
