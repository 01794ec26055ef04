"""DR-learner with AIPW pseudo-outcomes, pretrained from the arm-specific
outcome models (controls, treated or both)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment
from .lasso import Problem, cv_weighted_lasso, oof_path_predictions
from .models import CATEModel, LinearPredictor
from .nuisance import E_CLIP, consensus_support, cross_fit_e
from .rlearner import as_alpha_grid, _select, penalty_weights, _support_indicator

SOURCES = ("mu0", "mu1", "both")


@dataclass
class AipwScores:
    psi: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    e_hat: np.ndarray
    folds: FoldAssignment
    mu0_support: list = field(default_factory=list)
    mu1_support: list = field(default_factory=list)


def aipw_score(y, w, e, mu0, mu1):
    """psi = mu1 - mu0 + (w - e)/(e(1 - e)) * (y - mu_w)."""
    mu_w = np.where(w == 1, mu1, mu0)
    return mu1 - mu0 + (w - e) / (e * (1 - e)) * (y - mu_w)


def aipw_pseudo_outcomes(data: Dataset, folds: FoldAssignment, e_hat=None, rng=None, n_lambda=100) -> AipwScores:
    """Cross-fitted AIPW scores with lasso outcome models per arm."""
    mu0 = np.empty(data.n)
    mu1 = np.empty(data.n)
    sup0, sup1 = [], []
    for k, train, test in folds.splits():
        for arm, out, sup in ((0, mu0, sup0), (1, mu1, sup1)):
            rows = train[data.w[train] == arm]
            if rows.size == 0:
                raise ValueError(f"fold {k}: treatment arm {arm} is empty in the training complement")
            inner = folds.restrict(rows)
            if inner.k < 2:
                raise ValueError(f"fold {k}: arm {arm} spans fewer than two inner folds")
            cv = cv_weighted_lasso(data.x[rows], data.y[rows], folds=inner, n_lambda=n_lambda)
            out[test] = cv.fit_at_min.predict(data.x[test])
            sup.append(cv.fit_at_min.active_set)
    if e_hat is None:
        e_hat, _ = cross_fit_e(data, folds, rng)
    e_hat = np.clip(np.asarray(e_hat, dtype=float), *E_CLIP)
    psi = aipw_score(data.y, data.w, e_hat, mu0, mu1)
    return AipwScores(psi, mu0, mu1, e_hat, folds, sup0, sup1)


def _source_supports(scores: AipwScores, source: str):
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}")
    if source == "mu0":
        return [np.asarray(s) for s in scores.mu0_support]
    if source == "mu1":
        return [np.asarray(s) for s in scores.mu1_support]
    return [consensus_support([a, b], "union") for a, b in zip(scores.mu0_support, scores.mu1_support)]


def fit_pretrained_drlasso(data: Dataset, scores: AipwScores, source: str = "both", alpha_grid=None,
                           folds: FoldAssignment | None = None, *, n_lambda=100, ratio=None) -> CATEModel:
    """Lasso of psi on X with adaptive penalties from the chosen arm models' supports.

    (alpha, lambda) are tuned by out-of-fold squared error of the psi-regression.
    """
    grid = as_alpha_grid(alpha_grid)
    folds = folds or scores.folds
    p = data.p
    supports = _source_supports(scores, source)
    if len(supports) != folds.k:
        raise ValueError("scores were not built on these folds")
    refit_support = consensus_support(supports, "union")
    psi = scores.psi
    v = np.ones(data.n)
    full = Problem(data.x, psi, v)
    problems = {}
    per_alpha = []
    for a in grid:
        ff = [penalty_weights(_support_indicator(s, p), a).factors for s in supports]
        full_f = penalty_weights(_support_indicator(refit_support, p), a).factors
        lambdas = full.lambda_grid(full_f, n_lambda, ratio)
        pred = oof_path_predictions(data.x, psi, v, folds, lambdas, ff, problems=problems)
        curve = ((psi[:, None] - pred) ** 2).mean(axis=0)
        i = int(np.argmin(curve))
        per_alpha.append({"alpha": a, "cv_rloss": float(curve[i]), "lambda": float(lambdas[i]),
                          "lambdas": lambdas, "index": i, "factors": full_f})
    best = _select(per_alpha)
    path, _, _ = full.solve_path(best["factors"], best["lambdas"][: best["index"] + 1])
    b0, coef = full.to_original(path[-1])
    return CATEModel(
        kind="dr_lasso",
        predictor=LinearPredictor(float(b0[0]), coef[0]),
        chosen_alpha=best["alpha"],
        chosen_lambda2=best["lambda"],
        cv_rloss=best["cv_rloss"],
        hyperparameters={"source": source, "alpha_grid": list(grid.values)},
        feature_names=data.feature_names,
        diagnostics={"cv_loss_by_alpha": {r["alpha"]: r["cv_rloss"] for r in per_alpha}},
    )
