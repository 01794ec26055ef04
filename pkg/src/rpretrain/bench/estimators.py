"""Estimator registry for the benchmark runner.

Each kind maps to a function ``fit(ctx, spec) -> list[(label, model)]``.
Most kinds return one model labelled with the estimator name; the sweep
kinds return one model per pretraining strength, labelled ``name@alpha``.
Nuisance fits are cached on the per-replication :class:`Context`, so
estimators sharing an m-learner reuse the same cross-fitted values.
"""

from __future__ import annotations

import dataclasses

from ..boosting import DEFAULT_RATE, DEFAULT_ROUNDS, RBOOST_ROUNDS, fit_basis_rlasso, fit_rboost
from ..data import Dataset, make_folds
from ..drlearner import aipw_pseudo_outcomes, fit_pretrained_drlasso
from ..forest import ForestParams, fit_forest_rlearner
from ..nuisance import estimate_nuisances
from ..rlearner import fit_pretrained_rlasso, fit_uni_rlasso


class Context:
    """Everything one replication's estimators share: data, folds, nuisances."""

    def __init__(self, data: Dataset, k: int, rng, propensity: str = "known"):
        if propensity == "estimated" and data.known_propensity is not None:
            data = dataclasses.replace(data, known_propensity=None)
        self.data = data
        self.rng = rng
        self.folds = make_folds(data.n, k, data.w, rng.child(0))
        self._nuisances = {}
        self._scores = None
        self._e_hat = None

    @property
    def e_hat(self):
        if self._e_hat is None:
            self._e_hat = self.nuisances("lasso").e_hat
        return self._e_hat

    def nuisances(self, m_learner: str = "lasso"):
        if m_learner not in self._nuisances:
            # propensity is fitted once (with the lasso nuisances) and shared
            e = None if m_learner == "lasso" else self.e_hat
            stream = {"lasso": 1, "unilasso": 2, "boost": 3, "forest": 4}[m_learner]
            self._nuisances[m_learner] = estimate_nuisances(
                self.data, self.folds, m_learner, self.rng.child(stream),
                e_hat=e if e is not None else self.data.known_propensity,
                full_fit=m_learner in ("lasso", "unilasso"))
        return self._nuisances[m_learner]

    def aipw(self):
        if self._scores is None:
            self._scores = aipw_pseudo_outcomes(self.data, self.folds, e_hat=self.e_hat, rng=self.rng.child(5))
        return self._scores


def _lasso_kw(spec):
    return {k: spec[k] for k in ("n_lambda", "ratio") if k in spec}


def _rlasso(ctx, spec):
    nu = ctx.nuisances(spec.get("m_learner", "lasso"))
    m = fit_pretrained_rlasso(ctx.data, nu, spec.get("alpha_grid"), refit_rule=spec.get("refit_rule", "full"),
                              **_lasso_kw(spec))
    return [(spec["name"], m)]


def _uni_rlasso(ctx, spec):
    nu = ctx.nuisances(spec.get("m_learner", "lasso"))
    m = fit_uni_rlasso(ctx.data, nu, spec.get("alpha_grid"), refit_rule=spec.get("refit_rule", "full"),
                       **_lasso_kw(spec))
    return [(spec["name"], m)]


def _sweep(fitter):
    def run(ctx, spec):
        nu = ctx.nuisances(spec.get("m_learner", "lasso"))
        m = fitter(ctx.data, nu, spec.get("alpha_grid"), refit_rule=spec.get("refit_rule", "full"),
                   keep_per_alpha=True, **_lasso_kw(spec))
        return [(f"{spec['name']}@{a:g}", ma) for a, ma in m.diagnostics["per_alpha_models"].items()]
    return run


def _dr_lasso(ctx, spec):
    m = fit_pretrained_drlasso(ctx.data, ctx.aipw(), spec.get("source", "both"), spec.get("alpha_grid"),
                               **_lasso_kw(spec))
    return [(spec["name"], m)]


def _rboost(ctx, spec):
    nu = ctx.nuisances(spec.get("m_learner", "boost"))
    m = fit_rboost(ctx.data, nu, M_grid=tuple(spec.get("M_grid", RBOOST_ROUNDS)),
                   rates=tuple(spec.get("rates", (DEFAULT_RATE,))))
    return [(spec["name"], m)]


def _forest(ctx, spec):
    mode = spec.get("mode", "plain")
    nu = ctx.nuisances(spec.get("m_learner", "forest"))
    params = ForestParams(**{k: spec[k] for k in ("n_trees", "mtry", "min_leaf", "subsample", "honest") if k in spec})
    kw = {}
    if mode == "lasso_prescreened" and nu.m_learner not in ("lasso", "unilasso"):
        lasso = ctx.nuisances("lasso")
        kw = {"lasso_coefficients_by_fold": lasso.m_coefficients_by_fold,
              "lasso_coefficients_full": lasso.m_coefficients_full}
    m = fit_forest_rlearner(ctx.data, nu, mode, spec.get("grid"), rng=ctx.rng.child(6), params=params, **kw)
    return [(spec["name"], m)]


def _basis_rlasso(ctx, spec):
    sources = spec.get("sources", "m-only")
    boost = ctx.nuisances("boost") if sources == "m-and-tau" else None
    m = fit_basis_rlasso(ctx.data, ctx.folds, sources, tuple(spec.get("M_grid", DEFAULT_ROUNDS)),
                         spec.get("rate", DEFAULT_RATE), spec.get("alpha_grid"), rng=ctx.rng.child(7),
                         e_hat=ctx.e_hat, boost_nuisances=boost, n_lambda=spec.get("n_lambda", 100))
    return [(spec["name"], m)]


REGISTRY = {
    "rlasso": _rlasso,
    "uni_rlasso": _uni_rlasso,
    "rlasso_sweep": _sweep(fit_pretrained_rlasso),
    "uni_rlasso_sweep": _sweep(fit_uni_rlasso),
    "dr_lasso": _dr_lasso,
    "rboost": _rboost,
    "forest": _forest,
    "basis_rlasso": _basis_rlasso,
}


def fit_estimator(ctx: Context, spec: dict):
    return REGISTRY[spec["kind"]](ctx, spec)


def tuned_model(data: Dataset, spec: dict, k: int, rng, propensity="known"):
    """Refit one estimator from scratch on ``data`` and return its tuned model
    (sweeps return the CV-selected alpha). Used inside the sequential test."""
    kind = spec["kind"]
    if kind.endswith("_sweep"):
        spec = dict(spec, kind=kind[: -len("_sweep")])
    ctx = Context(data, k, rng, propensity)
    return fit_estimator(ctx, spec)[0][1]


def support_truth(kind: str) -> bool:
    """Whether support metrics are meaningful for this kind (linear in X)."""
    return kind in ("rlasso", "uni_rlasso", "rlasso_sweep", "uni_rlasso_sweep", "dr_lasso")


def heldout_scores(test: Dataset, rng):
    """AIPW scores for a test set, cross-fitted on the test set itself."""
    folds = make_folds(test.n, 5, test.w, rng.child(0))
    return aipw_pseudo_outcomes(test, folds, e_hat=test.known_propensity, rng=rng.child(1)).psi
