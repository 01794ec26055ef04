"""Gradient-boosted stumps: a standalone R-learner (R-Boost) and a source of
split-indicator basis functions for the pretrained R-lasso.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment, as_rng
from .models import CATEModel, LinearPredictor

DEFAULT_ROUNDS = (100, 500)
# standalone R-Boost tunes its round count more finely (early-stopping analogue)
RBOOST_ROUNDS = (10, 25, 50, 100, 200, 500)
DEFAULT_RATE = 0.1


@dataclass
class StumpEnsemble:
    features: np.ndarray
    thresholds: np.ndarray
    left: np.ndarray
    right: np.ndarray
    learning_rate: float
    intercept: float

    @property
    def M(self) -> int:
        return int(self.features.size)

    def stump_outputs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        go_right = x[:, self.features] > self.thresholds
        return np.where(go_right, self.right, self.left)

    def predict(self, x, rounds: int | None = None) -> np.ndarray:
        out = self.stump_outputs(x)
        if rounds is not None:
            out = out[:, :rounds]
        return self.intercept + self.learning_rate * out.sum(axis=1)

    def staged_predict(self, x, rounds) -> np.ndarray:
        """Predictions after each count in ``rounds`` (columns in that order)."""
        cum = np.cumsum(self.stump_outputs(x), axis=1)
        cols = []
        for m in rounds:
            m = min(int(m), self.M)
            cols.append(self.intercept + (self.learning_rate * cum[:, m - 1] if m > 0 else 0.0))
        return np.column_stack(cols)

    def truncated(self, rounds: int) -> "StumpEnsemble":
        s = slice(0, rounds)
        return StumpEnsemble(self.features[s], self.thresholds[s], self.left[s], self.right[s],
                             self.learning_rate, self.intercept)

    def to_dict(self) -> dict:
        return {"type": "stumps", "features": self.features.tolist(), "thresholds": self.thresholds.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "learning_rate": self.learning_rate, "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d) -> "StumpEnsemble":
        return cls(np.asarray(d["features"], dtype=int), np.asarray(d["thresholds"], dtype=float),
                   np.asarray(d["left"], dtype=float), np.asarray(d["right"], dtype=float),
                   float(d["learning_rate"]), float(d["intercept"]))


def fit_stump_boost(x, targets, obs_weights=None, M: int = 100, learning_rate: float = DEFAULT_RATE) -> StumpEnsemble:
    """Squared-error boosting of depth-1 trees with exhaustive split search.

    Candidate thresholds are midpoints between consecutive distinct values.
    Boosting stops early when no split reduces the weighted residual SSE
    (e.g. constant targets).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    x = np.asarray(x, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    n, p = x.shape
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    distinct = xs[1:] > xs[:-1]
    vs = v[order]
    wl = np.cumsum(vs, axis=0)[:-1]
    wtot = v.sum()
    wr = wtot - wl
    ok = distinct & (wl > 0) & (wr > 0)
    wl_safe = np.where(ok, wl, 1.0)
    wr_safe = np.where(ok, wr, 1.0)

    intercept = float(v @ y / wtot)
    r = y - intercept
    feats, thrs, lefts, rights = [], [], [], []
    sst = float(v @ r**2)
    for _ in range(M):
        vr = (v * r)[order]
        sl = np.cumsum(vr, axis=0)[:-1]
        stot = vr[:, 0].sum()
        sr = stot - sl
        gain = np.where(ok, sl**2 / wl_safe + sr**2 / wr_safe - stot**2 / wtot, -np.inf)
        flat = int(np.argmax(gain))
        i, j = divmod(flat, p)
        if not np.isfinite(gain[i, j]) or gain[i, j] <= 1e-12 * max(sst, 1e-300):
            break
        thr = 0.5 * (xs[i, j] + xs[i + 1, j])
        lv = sl[i, j] / wl[i, j]
        rv = sr[i, j] / wr[i, j]
        feats.append(j)
        thrs.append(thr)
        lefts.append(lv)
        rights.append(rv)
        r = r - learning_rate * np.where(x[:, j] > thr, rv, lv)
    return StumpEnsemble(np.asarray(feats, dtype=int), np.asarray(thrs, dtype=float),
                         np.asarray(lefts, dtype=float), np.asarray(rights, dtype=float),
                         float(learning_rate), intercept)


def basis_expand(ensemble: StumpEnsemble, x) -> np.ndarray:
    """Split indicators 1{x_j > t}, one column per boosting round.

    Repeated stumps give repeated columns; the lasso collapses identical
    columns internally.
    """
    x = np.asarray(x, dtype=float)
    return (x[:, ensemble.features] > ensemble.thresholds).astype(float)


def tune_stump_boost(x, y, folds: FoldAssignment, rounds=(100, 200, 300, 400, 500), learning_rate=DEFAULT_RATE,
                     obs_weights=None) -> StumpEnsemble:
    """Pick the number of rounds by out-of-fold weighted squared error, then refit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.ones(len(y)) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    rounds = sorted(int(m) for m in rounds)
    err = np.zeros(len(rounds))
    for k, train, test in folds.splits():
        ens = fit_stump_boost(x[train], y[train], v[train], rounds[-1], learning_rate)
        pred = ens.staged_predict(x[test], rounds)
        err += v[test] @ (y[test, None] - pred) ** 2
    best = rounds[int(np.argmin(err))]
    return fit_stump_boost(x, y, v, best, learning_rate)


@dataclass
class BasisExpansion:
    """Original columns followed by stump-indicator columns, with provenance tags."""

    p: int
    ensembles: list = field(default_factory=list)
    sources: list = field(default_factory=list)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        blocks = [x] + [basis_expand(e, x) for e in self.ensembles]
        return np.hstack(blocks)

    @property
    def tags(self) -> list:
        tags = ["x"] * self.p
        for src, e in zip(self.sources, self.ensembles):
            tags.extend([src] * e.M)
        return tags

    @property
    def protected(self) -> np.ndarray:
        return np.asarray([t == "tau" for t in self.tags])

    @property
    def width(self) -> int:
        return len(self.tags)

    def to_dict(self) -> dict:
        return {"p": self.p, "sources": list(self.sources), "ensembles": [e.to_dict() for e in self.ensembles]}

    @classmethod
    def from_dict(cls, d) -> "BasisExpansion":
        return cls(int(d["p"]), [StumpEnsemble.from_dict(e) for e in d["ensembles"]], list(d["sources"]))


def augmented_design(data: Dataset, sources: str = "m-only", M: int = 100, rate: float = DEFAULT_RATE,
                     folds: FoldAssignment | None = None, tau_nuisances=None, rows=None) -> BasisExpansion:
    """Stump bases from a boosting fit of y on X and, optionally, of the effect.

    ``sources="m-and-tau"`` adds bases from a preliminary R-Boost fit on the
    pseudo-outcome (requires cross-fitted ``tau_nuisances``); those columns
    are tagged ``"tau"`` and are exempt from pretraining penalties
    downstream. The ensembles are grown on ``rows`` (default: all rows), or
    on the training complement of every fold when ``folds`` is given, in
    which case a list with one expansion per fold is returned.
    """
    if sources not in ("m-only", "m-and-tau"):
        raise ValueError("sources must be 'm-only' or 'm-and-tau'")
    if folds is not None:
        return [augmented_design(data, sources, M, rate, None, tau_nuisances, train)
                for _, train, _ in folds.splits()]
    rows = np.arange(data.n) if rows is None else np.asarray(rows)
    ens_m = fit_stump_boost(data.x[rows], data.y[rows], None, M, rate)
    expansion = BasisExpansion(data.p, [ens_m], ["m"])
    if sources == "m-and-tau":
        if tau_nuisances is None:
            raise ValueError("m-and-tau bases need cross-fitted nuisances for the effect fit")
        from .rlearner import pseudo_outcome

        z, v = pseudo_outcome(data, tau_nuisances)
        ens_t = fit_stump_boost(data.x[rows], z[rows], v[rows], M, rate)
        expansion.ensembles.append(ens_t)
        expansion.sources.append("tau")
    return expansion


def fit_rboost(data: Dataset, nuisances, M_grid=RBOOST_ROUNDS, rates=(DEFAULT_RATE,),
               folds: FoldAssignment | None = None) -> CATEModel:
    """R-Boost: stump boosting of the pseudo-outcome with weights (w - e)^2.

    (M, rate) tuned by out-of-fold R-loss.
    """
    from .rlearner import pseudo_outcome

    if any(r <= 0 for r in rates):
        raise ValueError("learning rate must be > 0")
    folds = folds or nuisances.folds
    z, v = pseudo_outcome(data, nuisances)
    M_grid = sorted(int(m) for m in M_grid)
    scores = {}
    for rate in rates:
        loss = np.zeros(len(M_grid))
        for k, train, test in folds.splits():
            ens = fit_stump_boost(data.x[train], z[train], v[train], M_grid[-1], rate)
            pred = ens.staged_predict(data.x[test], M_grid)
            loss += v[test] @ (z[test, None] - pred) ** 2
        for m, l in zip(M_grid, loss / data.n):
            scores[(m, rate)] = float(l)
    (m_best, rate_best) = min(scores, key=lambda key: (scores[key], key[0]))
    ens = fit_stump_boost(data.x, z, v, m_best, rate_best)
    return CATEModel(
        kind="rboost",
        predictor=ens,
        cv_rloss=scores[(m_best, rate_best)],
        hyperparameters={"M": m_best, "learning_rate": rate_best},
        feature_names=data.feature_names,
        diagnostics={"cv_rloss_by_M": scores},
    )


def fit_basis_rlasso(data: Dataset, folds: FoldAssignment, sources="m-only", M_grid=DEFAULT_ROUNDS,
                     rate=DEFAULT_RATE, alpha_grid=None, rng=None, e_hat=None, boost_nuisances=None,
                     n_lambda=100) -> CATEModel:
    """Pretrained R-lasso on [X, stump bases]; M, alpha and lambda are chosen
    by CV R-loss.

    Every CV fold builds its bases from its own training complement, so the
    held-out rows never shape the features they are scored on; the deployed
    model uses bases grown on all rows. The mean-outcome lasso (and hence
    the pretraining support) runs on the augmented design.
    ``boost_nuisances`` supplies the cross-fitted m-hat for the preliminary
    effect fit when ``sources='m-and-tau'``.
    """
    from .lasso import Problem, cv_weighted_lasso, oof_path_predictions
    from .nuisance import NuisanceEstimates, cross_fit_e
    from .rlearner import _support_indicator, as_alpha_grid, penalty_weights, pseudo_outcome

    grid = as_alpha_grid(alpha_grid)
    rng = as_rng(rng)
    if e_hat is None:
        e_hat, _ = cross_fit_e(data, folds, rng.child(0))
    best = None
    for M in sorted(int(m) for m in M_grid):
        full_exp = augmented_design(data, sources, M, rate, tau_nuisances=boost_nuisances)
        fold_exp = augmented_design(data, sources, M, rate, folds, boost_nuisances)
        full_x = full_exp.transform(data.x)
        designs = [e.transform(data.x) for e in fold_exp]
        # mean-outcome lasso on each fold's own augmented design
        m_hat = np.empty(data.n)
        supports = []
        for k, train, test in folds.splits():
            cv = cv_weighted_lasso(designs[k][train], data.y[train], folds=folds.restrict(train),
                                   n_lambda=n_lambda)
            m_hat[test] = cv.fit_at_min.predict(designs[k][test])
            supports.append(cv.fit_at_min.active_set)
        m_full = cv_weighted_lasso(full_x, data.y, folds=folds, n_lambda=n_lambda).fit_at_min
        nuis = NuisanceEstimates(m_hat, np.asarray(e_hat, dtype=float), folds, "lasso", supports,
                                 m_coefficients_full=m_full.coefficients)
        z, v = pseudo_outcome(data, nuis)
        protected = full_exp.protected
        q = full_exp.width
        full = Problem(full_x, z, v)
        problems = {}
        for a in grid:
            ff = [penalty_weights(_support_indicator(s, q), a, protected).factors for s in supports]
            full_f = penalty_weights(_support_indicator(nuis.m_support_full, q), a, protected).factors
            lambdas = full.lambda_grid(full_f, n_lambda)
            pred = oof_path_predictions(full_x, z, v, folds, lambdas, ff, problems=problems, designs=designs)
            curve = (v[:, None] * (z[:, None] - pred) ** 2).mean(axis=0)
            i = int(np.argmin(curve))
            rec = {"alpha": a, "cv_rloss": float(curve[i]), "lambda": float(lambdas[i]), "lambdas": lambdas,
                   "index": i, "factors": full_f, "M": M}
            if best is None or rec["cv_rloss"] < best[0]["cv_rloss"]:
                best = (rec, full, full_exp)
    rec, full, expansion = best
    path, _, _ = full.solve_path(rec["factors"], rec["lambdas"][: rec["index"] + 1])
    b0, coef = full.to_original(path[-1])
    return CATEModel(
        kind="basis_rlasso",
        predictor=LinearPredictor(float(b0[0]), coef[0], expansion),
        chosen_alpha=rec["alpha"],
        chosen_lambda2=rec["lambda"],
        cv_rloss=rec["cv_rloss"],
        hyperparameters={"M": rec["M"], "learning_rate": rate, "sources": sources,
                         "alpha_grid": list(grid.values)},
        feature_names=data.feature_names,
    )
