"""Cross-fitted estimates of the mean outcome m(x) and propensity e(x).

Nested tuning inside a training complement reuses the remaining outer folds
as inner folds, so a fold's model depends only on the *set* of rows in each
other fold, never on row order or on the held-out rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, SeededRng, as_rng
from . import lasso as _lasso

M_LEARNERS = ("lasso", "unilasso", "forest", "boost")
SUPPORT_RULES = ("union", "intersection", "per-fold")
E_CLIP = (0.01, 0.99)


@dataclass
class NuisanceEstimates:
    m_hat: np.ndarray
    e_hat: np.ndarray
    folds: FoldAssignment
    m_learner: str = "lasso"
    m_support_by_fold: list = field(default_factory=list)
    m_coefficients_by_fold: list = field(default_factory=list)
    m_importance_by_fold: list = field(default_factory=list)
    e_estimated: bool = False
    m_coefficients_full: np.ndarray | None = None

    @property
    def m_support_full(self) -> np.ndarray | None:
        if self.m_coefficients_full is None:
            return None
        return np.flatnonzero(self.m_coefficients_full != 0)

    @property
    def m_importance(self) -> np.ndarray | None:
        if not self.m_importance_by_fold:
            return None
        imp = np.mean(self.m_importance_by_fold, axis=0)
        return imp / imp.sum() if imp.sum() > 0 else np.full(imp.size, 1.0 / imp.size)


def _inner(folds: FoldAssignment, k: int) -> FoldAssignment:
    return folds.restrict(folds.train_rows(k))


def _fit_m_fold(learner, x, y, inner, rng, params):
    """Fit one training complement; returns (predict_fn, coef, importance)."""
    if learner == "lasso":
        cv = _lasso.cv_weighted_lasso(x, y, folds=inner, **params)
        fit = cv.fit_at_min
        return fit.predict, fit.coefficients, None
    if learner == "unilasso":
        fit = _lasso.fit_unilasso(x, y, inner, **params)
        return fit.predict, fit.coefficients, None
    if learner == "forest":
        from .forest import ForestParams, fit_regression_forest

        fparams = params.get("forest", ForestParams())
        forest = fit_regression_forest(x, y, None, fparams, None, rng)
        return forest.predict, None, forest.importance
    if learner == "boost":
        from .boosting import tune_stump_boost

        ens = tune_stump_boost(x, y, inner, **params)
        return ens.predict, None, None
    raise ValueError(f"unknown m learner {learner!r}")


def cross_fit_m(data: Dataset, folds: FoldAssignment, learner: str = "lasso", rng=None, **params):
    """Out-of-fold predictions of m(x) = E[Y | X = x].

    Returns ``(m_hat, supports, coefficients, importances)``, one entry per
    fold in the last three. Lasso-type learners report their active sets;
    the forest reports split-improvement importances.
    """
    if learner not in M_LEARNERS:
        raise ValueError(f"unknown m learner {learner!r}; choose from {M_LEARNERS}")
    rng = as_rng(rng)
    m_hat = np.empty(data.n)
    supports, coefs, imps = [], [], []
    for k, train, test in folds.splits():
        y_tr = data.y[train]
        if np.ptp(y_tr) == 0:
            # constant outcome: the mean is exact and nothing is selected
            m_hat[test] = y_tr[0]
            supports.append(np.array([], dtype=int))
            coefs.append(np.zeros(data.p))
            imps.append(np.zeros(data.p))
            continue
        predict, coef, imp = _fit_m_fold(learner, data.x[train], y_tr, _inner(folds, k), rng.child(k), params)
        m_hat[test] = predict(data.x[test])
        if coef is not None:
            coefs.append(coef)
            supports.append(np.flatnonzero(coef != 0))
        if imp is not None:
            imps.append(imp)
    return m_hat, supports, coefs, imps


def cross_fit_e(data: Dataset, folds: FoldAssignment, rng=None, **params):
    """Propensity scores: known randomization probabilities, else cross-fit logistic lasso."""
    if data.known_propensity is not None:
        return data.known_propensity.copy(), False
    e_hat = np.empty(data.n)
    for k, train, test in folds.splits():
        cv = _lasso.fit_logistic_lasso_cv(data.x[train], data.w[train], _inner(folds, k), clip=E_CLIP, **params)
        e_hat[test] = cv.fit_at_min.predict_proba(data.x[test])
    return np.clip(e_hat, *E_CLIP), True


def fit_m_full(data: Dataset, folds: FoldAssignment, learner: str = "lasso", rng=None, **params):
    """Mean-outcome coefficients from one fit on all rows (lasso-type learners only).

    Tuning uses ``folds`` as the CV folds. This is the single support that
    pretrains the deployed effect model.
    """
    if learner not in ("lasso", "unilasso"):
        return None
    if np.ptp(data.y) == 0:
        return np.zeros(data.p)
    _, coef, _ = _fit_m_fold(learner, data.x, data.y, folds, as_rng(rng), params)
    return np.asarray(coef, dtype=float)


def estimate_nuisances(data: Dataset, folds: FoldAssignment, m_learner: str = "lasso", rng=None,
                       m_params=None, e_hat=None, full_fit: bool = True) -> NuisanceEstimates:
    """Cross-fit both nuisances on the same folds.

    ``e_hat`` may be passed in to reuse an existing propensity fit. With
    ``full_fit`` a lasso-type m learner is also fitted once on all rows; its
    support drives the final refit of pretrained effect models.
    """
    rng = as_rng(rng)
    m_hat, supports, coefs, imps = cross_fit_m(data, folds, m_learner, rng, **(m_params or {}))
    full = fit_m_full(data, folds, m_learner, rng.child(folds.k), **(m_params or {})) if full_fit else None
    if e_hat is None:
        e_hat, estimated = cross_fit_e(data, folds, rng)
    else:
        estimated = data.known_propensity is None
    return NuisanceEstimates(
        m_hat=m_hat,
        e_hat=np.asarray(e_hat, dtype=float),
        folds=folds,
        m_learner=m_learner,
        m_support_by_fold=supports,
        m_coefficients_by_fold=coefs,
        m_importance_by_fold=imps,
        e_estimated=estimated,
        m_coefficients_full=full,
    )


def consensus_support(supports, rule: str = "per-fold"):
    """Combine per-fold active sets into one (``union``/``intersection``) or keep them."""
    if rule not in SUPPORT_RULES:
        raise ValueError(f"unknown support rule {rule!r}")
    sets = [set(int(j) for j in s) for s in supports]
    if rule == "per-fold":
        return [np.array(sorted(s), dtype=int) for s in sets]
    if not sets:
        return np.array([], dtype=int)
    combined = set.union(*sets) if rule == "union" else set.intersection(*sets)
    return np.array(sorted(combined), dtype=int)
