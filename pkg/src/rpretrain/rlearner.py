"""Pretrained R-lasso: penalty factors for the effect model come from the
active set of the mean-outcome lasso, and the pretraining strength alpha is
tuned jointly with lambda by cross-validated R-loss.

The effect-model objective

    (1/n) sum_i [(y_i - m_i) - (w_i - e_i) tau(x_i)]^2 + lam sum_j f_j |theta_j|

is solved as a weighted lasso of the pseudo-outcome z = (y - m)/(w - e) with
observation weights (w - e)^2; both losses agree term by term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldAssignment
from .lasso import PenaltySpec, Problem, oof_path_predictions, univariate_fits
from .models import CATEModel, LinearPredictor
from .nuisance import NuisanceEstimates, consensus_support

DEFAULT_ALPHAS = (0.05, 0.1, 0.2, 0.25, 0.375, 0.5, 0.75, 1.0)
POSITIVITY_EPS = 1e-6


@dataclass(frozen=True)
class AlphaGrid:
    values: tuple = DEFAULT_ALPHAS

    def __post_init__(self):
        vals = tuple(float(a) for a in self.values)
        if not vals:
            raise ValueError("alpha grid is empty")
        if any(not 0 < a <= 1 for a in vals):
            raise ValueError("alpha values must lie in (0, 1]")
        if list(vals) != sorted(vals) or len(set(vals)) != len(vals):
            raise ValueError("alpha grid must be strictly ascending")
        if vals[-1] != 1.0:
            raise ValueError("alpha grid must include 1 (the unpretrained baseline)")
        object.__setattr__(self, "values", vals)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def as_alpha_grid(grid) -> AlphaGrid:
    if grid is None:
        return AlphaGrid()
    if isinstance(grid, AlphaGrid):
        return grid
    return AlphaGrid(tuple(grid))


def penalty_weights(beta_hat, alpha: float, protected=None) -> PenaltySpec:
    """Factor 1 for features in the support of ``beta_hat`` (or protected), 1/alpha otherwise."""
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    if alpha <= 0:
        raise ValueError("alpha must be > 0; exclude features explicitly with an infinite factor")
    if alpha > 1:
        raise ValueError("alpha must be <= 1")
    prot = np.zeros(beta_hat.size, dtype=bool) if protected is None else np.asarray(protected, dtype=bool)
    if prot.size != beta_hat.size:
        raise ValueError("protected mask length differs from beta_hat")
    keep = (beta_hat != 0) | prot
    factors = np.where(keep, 1.0, 1.0 / alpha)
    return PenaltySpec(factors, alpha, prot)


def _support_indicator(support, p):
    ind = np.zeros(p)
    ind[np.asarray(support, dtype=int)] = 1.0
    return ind


def rloss_terms(tau_hat, y, w, m_hat, e_hat) -> np.ndarray:
    return ((y - m_hat) - (w - e_hat) * tau_hat) ** 2


def rloss(tau_hat, data: Dataset, nuisances: NuisanceEstimates) -> float:
    tau_hat = np.asarray(tau_hat, dtype=float)
    if tau_hat.shape[0] != data.n:
        raise ValueError("tau_hat length differs from the data")
    if not np.all(np.isfinite(tau_hat)):
        raise ValueError("non-finite tau_hat")
    return float(rloss_terms(tau_hat, data.y, data.w, nuisances.m_hat, nuisances.e_hat).mean())


def pseudo_outcome(data: Dataset, nuisances: NuisanceEstimates):
    """``(z, weights)`` with z = (y - m)/(w - e) and weights (w - e)^2."""
    d = data.w - nuisances.e_hat
    if np.any(np.abs(d) < POSITIVITY_EPS):
        raise ValueError("|w - e_hat| < 1e-6 on some rows: positivity violation")
    return (data.y - nuisances.m_hat) / d, d**2


def _fold_supports(nuisances: NuisanceEstimates, folds: FoldAssignment, p: int):
    if len(nuisances.m_support_by_fold) != folds.k:
        raise ValueError("nuisances were not cross-fitted on these folds (need one m-support per fold)")
    return nuisances.m_support_by_fold


REFIT_RULES = ("full", "union", "intersection")


def _refit_support(nuisances, supports, rule):
    """Support that sets the penalty factors for the final all-rows refit."""
    if rule not in REFIT_RULES:
        raise ValueError(f"refit rule must be one of {REFIT_RULES}")
    if rule == "full":
        if nuisances.m_support_full is not None:
            return nuisances.m_support_full
        rule = "union"  # no all-rows fit available (non-lasso m learner)
    return consensus_support(supports, rule)


class _TauStage:
    """Shared machinery: per-alpha CV of a weighted lasso on a fixed design.

    The per-fold Gram matrices are formed once and reused for every alpha.
    """

    def __init__(self, design, z, v, folds, standardize=True, nonneg=False, n_lambda=100, ratio=None):
        self.design, self.z, self.v, self.folds = design, z, v, folds
        self.standardize, self.nonneg = standardize, nonneg
        self.n_lambda, self.ratio = n_lambda, ratio
        self.full = Problem(design, z, v, standardize)
        self.problems = {}

    def cv(self, fold_factors, full_factors):
        lambdas = self.full.lambda_grid(full_factors, self.n_lambda, self.ratio, self.nonneg)
        pred = oof_path_predictions(self.design, self.z, self.v, self.folds, lambdas, fold_factors,
                                    standardize=self.standardize, nonneg=self.nonneg,
                                    problems=self.problems)
        # R-loss of an out-of-fold tau: (1/n) sum v_i (z_i - tau_i)^2
        curve = (self.v[:, None] * (self.z[:, None] - pred) ** 2).mean(axis=0)
        i = int(np.argmin(curve))  # first index = largest lambda on ties
        return lambdas, curve, i

    def refit(self, factors, lambdas, i):
        path, _, conv = self.full.solve_path(factors, lambdas[: i + 1], self.nonneg)
        return self.full.to_original(path[-1])


def _select(per_alpha):
    """Smallest CV R-loss; ties go to the smallest alpha (grid is ascending)."""
    best = None
    for rec in per_alpha:
        if best is None or rec["cv_rloss"] < best["cv_rloss"]:
            best = rec
    return best


def fit_pretrained_rlasso(data: Dataset, nuisances: NuisanceEstimates, alpha_grid=None, protected=None,
                          folds: FoldAssignment | None = None, *, n_lambda=100, ratio=None,
                          refit_rule="full", keep_per_alpha=False, kind="rlasso") -> CATEModel:
    """Fit the pretrained R-lasso, tuning (alpha, lambda) by out-of-fold R-loss.

    For held-out fold k the penalty factors come from the mean-outcome model
    trained on the same complement. The final refit takes its factors from
    ``refit_rule``: ``"full"`` (default) uses the mean-outcome lasso fitted
    on all rows; ``"union"``/``"intersection"`` combine the per-fold supports.
    """
    grid = as_alpha_grid(alpha_grid)
    folds = folds or nuisances.folds
    p = data.p
    supports = _fold_supports(nuisances, folds, p)
    z, v = pseudo_outcome(data, nuisances)
    stage = _TauStage(data.x, z, v, folds, n_lambda=n_lambda, ratio=ratio)
    refit_support = _refit_support(nuisances, supports, refit_rule)
    per_alpha = []
    for a in grid:
        ff = [penalty_weights(_support_indicator(s, p), a, protected).factors for s in supports]
        full_f = penalty_weights(_support_indicator(refit_support, p), a, protected).factors
        lambdas, curve, i = stage.cv(ff, full_f)
        per_alpha.append({"alpha": a, "cv_rloss": float(curve[i]), "lambda": float(lambdas[i]),
                          "lambdas": lambdas, "curve": curve, "index": i, "factors": full_f})
    best = _select(per_alpha)
    b0, coef = stage.refit(best["factors"], best["lambdas"], best["index"])
    model = CATEModel(
        kind=kind,
        predictor=LinearPredictor(float(b0[0]), coef[0]),
        chosen_alpha=best["alpha"],
        chosen_lambda2=best["lambda"],
        cv_rloss=best["cv_rloss"],
        hyperparameters={"alpha_grid": list(grid.values), "refit_rule": refit_rule},
        feature_names=data.feature_names,
        diagnostics={"cv_rloss_by_alpha": {r["alpha"]: r["cv_rloss"] for r in per_alpha},
                     "refit_support": refit_support},
    )
    if keep_per_alpha:
        models = {}
        for rec in per_alpha:
            c0, c = stage.refit(rec["factors"], rec["lambdas"], rec["index"])
            models[rec["alpha"]] = CATEModel(kind, LinearPredictor(float(c0[0]), c[0]), rec["alpha"],
                                             rec["lambda"], rec["cv_rloss"], feature_names=data.feature_names)
        model.diagnostics["per_alpha_models"] = models
    return model


def fit_uni_rlasso(data: Dataset, nuisances: NuisanceEstimates, alpha_grid=None, protected=None,
                   folds: FoldAssignment | None = None, *, n_lambda=100, ratio=None,
                   refit_rule="full", keep_per_alpha=False) -> CATEModel:
    """UniLasso as the effect-model learner inside the pretrained R-learner.

    Stage 1 fits weighted univariate regressions of the pseudo-outcome on each
    feature (leave-fold-out fitted values); stage 2 is a nonnegative lasso on
    those fitted values whose penalty is multiplied by the pretraining factors.
    """
    grid = as_alpha_grid(alpha_grid)
    folds = folds or nuisances.folds
    p = data.p
    supports = _fold_supports(nuisances, folds, p)
    z, v = pseudo_outcome(data, nuisances)
    F, a, b = univariate_fits(data.x, z, v, folds)
    dead = b == 0
    stage = _TauStage(F, z, v, folds, standardize=False, nonneg=True, n_lambda=n_lambda, ratio=ratio)
    refit_support = _refit_support(nuisances, supports, refit_rule)

    def factors(support, alpha):
        f = penalty_weights(_support_indicator(support, p), alpha, protected).factors.copy()
        f[dead] = np.inf
        return f

    per_alpha = []
    for al in grid:
        ff = [factors(s, al) for s in supports]
        full_f = factors(refit_support, al)
        if not np.any(np.isfinite(full_f)):
            per_alpha.append({"alpha": al, "cv_rloss": float(v @ (z - np.average(z, weights=v)) ** 2 / data.n),
                              "lambda": 0.0, "factors": full_f, "lambdas": None, "index": 0})
            continue
        lambdas, curve, i = stage.cv(ff, full_f)
        per_alpha.append({"alpha": al, "cv_rloss": float(curve[i]), "lambda": float(lambdas[i]),
                          "lambdas": lambdas, "index": i, "factors": full_f})

    def materialize(rec):
        if rec["lambdas"] is None:
            return float(np.average(z, weights=v)), np.zeros(p)
        g0, g = stage.refit(rec["factors"], rec["lambdas"], rec["index"])
        gamma = g[0]
        return float(g0[0] + gamma @ a), gamma * b

    best = _select(per_alpha)
    b0, coef = materialize(best)
    model = CATEModel(
        kind="uni_rlasso",
        predictor=LinearPredictor(b0, coef),
        chosen_alpha=best["alpha"],
        chosen_lambda2=best["lambda"],
        cv_rloss=best["cv_rloss"],
        hyperparameters={"alpha_grid": list(grid.values), "refit_rule": refit_rule},
        feature_names=data.feature_names,
        diagnostics={"cv_rloss_by_alpha": {r["alpha"]: r["cv_rloss"] for r in per_alpha}},
    )
    if keep_per_alpha:
        model.diagnostics["per_alpha_models"] = {
            r["alpha"]: CATEModel("uni_rlasso", LinearPredictor(*materialize(r)), r["alpha"], r["lambda"],
                                  r["cv_rloss"], feature_names=data.feature_names)
            for r in per_alpha
        }
    return model
