"""Regression forests with weighted feature sampling, and a pseudo-outcome
forest R-learner with three ways of pretraining it from the m-model:
importance-weighted feature sampling, importance prescreening and lasso
prescreening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import Dataset, FoldAssignment, as_rng
from .models import CATEModel

MODES = ("plain", "pretrained", "prescreened", "lasso_prescreened")
DEFAULT_GRIDS = {
    "plain": (None,),
    "pretrained": (0.0, 0.25, 0.5, 0.75, 1.0),
    # thresholds in units of the uniform importance 1/p
    "prescreened": (0.0, 0.25, 0.5, 1.0),
    "lasso_prescreened": (1.0, 2.0, 4.0, 8.0),
}


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    mtry: int | None = None  # default ceil(sqrt(p))
    min_leaf: int = 5
    subsample: float = 0.5
    honest: bool = False

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1 or not 0 < self.subsample <= 1:
            raise ValueError("invalid forest parameters")


@njit(cache=True)
def _draw_features(probs, mtry, out):
    """Weighted sampling without replacement; stops early when mass runs out."""
    p = probs.shape[0]
    rem = probs.copy()
    count = 0
    for _ in range(mtry):
        total = 0.0
        for j in range(p):
            total += rem[j]
        if total <= 0.0:
            break
        u = np.random.random() * total
        acc = 0.0
        pick = -1
        for j in range(p):
            if rem[j] > 0.0:
                acc += rem[j]
                pick = j
                if u < acc:
                    break
        out[count] = pick
        rem[pick] = 0.0
        count += 1
    return count


@njit(cache=True)
def _build_tree(X, y, v, rows, probs, mtry, min_leaf, seed,
                feat, thr, lch, rch, val, importance):
    np.random.seed(seed)
    n_rows = rows.shape[0]
    idx = rows.copy()
    cand = np.empty(mtry, dtype=np.int64)
    stack_node = np.empty(2 * n_rows + 2, dtype=np.int64)
    stack_lo = np.empty(2 * n_rows + 2, dtype=np.int64)
    stack_hi = np.empty(2 * n_rows + 2, dtype=np.int64)
    top = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n_rows
    top = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo
        sw = 0.0
        sy = 0.0
        for t in range(lo, hi):
            i = idx[t]
            sw += v[i]
            sy += v[i] * y[i]
        val[node] = sy / sw if sw > 0 else 0.0
        feat[node] = -1
        if m < 2 * min_leaf or sw <= 0:
            continue
        base = sy * sy / sw
        ncand = _draw_features(probs, mtry, cand)
        best_gain = 1e-12 * (abs(base) + 1.0)
        best_j = -1
        best_t = 0.0
        seg = idx[lo:hi].copy()
        for c in range(ncand):
            j = cand[c]
            xv = np.empty(m)
            for t in range(m):
                xv[t] = X[seg[t], j]
            order = np.argsort(xv, kind="mergesort")
            wl = 0.0
            sl = 0.0
            for t in range(m - 1):
                i = seg[order[t]]
                wl += v[i]
                sl += v[i] * y[i]
                nl = t + 1
                if nl < min_leaf:
                    continue
                if m - nl < min_leaf:
                    break
                a = xv[order[t]]
                b = xv[order[t + 1]]
                if not b > a:
                    continue
                wr = sw - wl
                if wl <= 0 or wr <= 0:
                    continue
                sr = sy - sl
                gain = sl * sl / wl + sr * sr / wr - base
                if gain > best_gain:
                    best_gain = gain
                    best_j = j
                    best_t = 0.5 * (a + b)
        if best_j < 0:
            continue
        # partition idx[lo:hi] in place
        left_n = 0
        for t in range(m):
            if X[seg[t], best_j] <= best_t:
                idx[lo + left_n] = seg[t]
                left_n += 1
        r = lo + left_n
        for t in range(m):
            if X[seg[t], best_j] > best_t:
                idx[r] = seg[t]
                r += 1
        feat[node] = best_j
        thr[node] = best_t
        importance[best_j] += best_gain
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        lch[node] = lc
        rch[node] = rc
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + left_n
        top += 1
        stack_node[top] = rc
        stack_lo[top] = lo + left_n
        stack_hi[top] = hi
        top += 1
    return n_nodes


@njit(cache=True)
def _leaf_of(feat, thr, lch, rch, offset, xrow):
    node = 0
    while feat[offset + node] >= 0:
        if xrow[feat[offset + node]] <= thr[offset + node]:
            node = lch[offset + node]
        else:
            node = rch[offset + node]
    return node


@njit(cache=True)
def _predict(X, feat, thr, lch, rch, val, offsets):
    n = X.shape[0]
    T = offsets.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(T):
            off = offsets[t]
            s += val[off + _leaf_of(feat, thr, lch, rch, off, X[i])]
        out[i] = s / T
    return out


@njit(cache=True)
def _honest_values(X, y, v, rows, feat, thr, lch, rch, val, off, n_nodes):
    sw = np.zeros(n_nodes)
    sy = np.zeros(n_nodes)
    for t in range(rows.shape[0]):
        i = rows[t]
        leaf = _leaf_of(feat, thr, lch, rch, off, X[i])
        sw[leaf] += v[i]
        sy[leaf] += v[i] * y[i]
    for node in range(n_nodes):
        if feat[off + node] < 0 and sw[node] > 0:
            val[off + node] = sy[node] / sw[node]


@dataclass
class Forest:
    feat: np.ndarray
    thr: np.ndarray
    lch: np.ndarray
    rch: np.ndarray
    val: np.ndarray
    offsets: np.ndarray
    importance: np.ndarray
    feature_sampling_probs: np.ndarray
    mtry: int
    min_leaf: int

    @property
    def n_trees(self) -> int:
        return self.offsets.size - 1

    def predict(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.asarray(x, dtype=float))
        return _predict(x, self.feat, self.thr, self.lch, self.rch, self.val, self.offsets)

    def split_features(self) -> np.ndarray:
        return np.unique(self.feat[self.feat >= 0])

    def to_dict(self) -> dict:
        return {
            "type": "forest",
            **{k: getattr(self, k).tolist() for k in ("feat", "thr", "lch", "rch", "val", "offsets",
                                                       "importance", "feature_sampling_probs")},
            "mtry": self.mtry,
            "min_leaf": self.min_leaf,
        }

    @classmethod
    def from_dict(cls, d) -> "Forest":
        ints = ("feat", "lch", "rch", "offsets")
        arrays = {k: np.asarray(d[k], dtype=np.int64 if k in ints else float)
                  for k in ("feat", "thr", "lch", "rch", "val", "offsets", "importance", "feature_sampling_probs")}
        return cls(**arrays, mtry=int(d["mtry"]), min_leaf=int(d["min_leaf"]))


def fit_regression_forest(x, targets, obs_weights=None, params: ForestParams | None = None,
                          sampling_probs=None, rng=None) -> Forest:
    """Grow ``params.n_trees`` CART regression trees on half-subsamples.

    At every node ``mtry`` candidate features are drawn without replacement
    with probabilities ``sampling_probs``; importance is the weighted SSE
    reduction credited to each split feature, normalized to sum to 1.
    """
    params = params or ForestParams()
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    n, p = x.shape
    v = np.ones(n) if obs_weights is None else np.asarray(obs_weights, dtype=float)
    probs = np.full(p, 1.0 / p) if sampling_probs is None else np.asarray(sampling_probs, dtype=float)
    if probs.size != p or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise ValueError("sampling_probs must be a probability vector of length p")
    mtry = params.mtry or math.ceil(math.sqrt(p))
    mtry = max(1, min(mtry, p))
    gen = as_rng(rng).generator()
    seeds = gen.integers(0, 2**31 - 1, size=params.n_trees)
    n_sub = max(2, int(round(params.subsample * n))) if params.subsample < 1 else n
    max_nodes = 2 * n_sub + 1
    T = params.n_trees
    feat = np.full(T * max_nodes, -1, dtype=np.int64)
    thr = np.zeros(T * max_nodes)
    lch = np.zeros(T * max_nodes, dtype=np.int64)
    rch = np.zeros(T * max_nodes, dtype=np.int64)
    val = np.zeros(T * max_nodes)
    sizes = np.zeros(T, dtype=np.int64)
    importance = np.zeros(p)
    for t in range(T):
        rows = np.sort(gen.permutation(n)[:n_sub]) if n_sub < n else np.arange(n)
        if params.honest:
            half = rows.size // 2
            struct, est = rows[:half], rows[half:]
        else:
            struct, est = rows, None
        s = slice(t * max_nodes, (t + 1) * max_nodes)
        nn = _build_tree(x, y, v, struct.astype(np.int64), probs, mtry, params.min_leaf, int(seeds[t]),
                         feat[s], thr[s], lch[s], rch[s], val[s], importance)
        if est is not None:
            _honest_values(x, y, v, est.astype(np.int64), feat, thr, lch, rch, val, t * max_nodes, nn)
        sizes[t] = nn
    # compact storage
    keep = np.concatenate([np.arange(t * max_nodes, t * max_nodes + sizes[t]) for t in range(T)])
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    total = importance.sum()
    imp = importance / total if total > 0 else np.full(p, 1.0 / p)
    return Forest(feat[keep], thr[keep], lch[keep], rch[keep], val[keep], offsets, imp, probs, mtry,
                  params.min_leaf)


def weights_from_importance(importance, strength: float) -> np.ndarray:
    """Mix uniform feature sampling with the m-model importances."""
    imp = np.asarray(importance, dtype=float)
    if not 0 <= strength <= 1:
        raise ValueError("strength must lie in [0, 1]")
    p = imp.size
    return (1 - strength) * np.full(p, 1.0 / p) + strength * imp


def prescreen(importance, threshold: float) -> np.ndarray:
    imp = np.asarray(importance, dtype=float)
    if threshold > imp.max():
        raise ValueError("threshold exceeds the largest importance: nothing would be kept")
    return np.flatnonzero(imp >= threshold)


def probs_from_kept(kept, p) -> np.ndarray:
    probs = np.zeros(p)
    probs[np.asarray(kept, dtype=int)] = 1.0
    return probs / probs.sum()


def lasso_prescreen(m_coefficients, boost: float) -> np.ndarray:
    """Relative weight ``boost`` for lasso-active features, 1 for the others."""
    coef = np.asarray(m_coefficients, dtype=float)
    raw = np.where(coef != 0, float(boost), 1.0)
    return raw / raw.sum()


def _mode_probs(mode, value, importance, lasso_coef, p):
    if mode == "plain":
        return np.full(p, 1.0 / p)
    if mode == "pretrained":
        return weights_from_importance(importance, value)
    if mode == "prescreened":
        return probs_from_kept(prescreen(importance, value / p), p)
    if mode == "lasso_prescreened":
        return lasso_prescreen(lasso_coef, value)
    raise ValueError(f"unknown forest mode {mode!r}")


def fit_forest_rlearner(data: Dataset, nuisances, mode: str = "plain", grid=None,
                        folds: FoldAssignment | None = None, rng=None, params: ForestParams | None = None,
                        lasso_coefficients_by_fold=None, lasso_coefficients_full=None) -> CATEModel:
    """Pseudo-outcome forest R-learner with optional pretraining.

    The forest is grown on z = (y - m)/(w - e) with weights (w - e)^2. The
    mode's hyperparameter (strength, threshold or boost) is tuned by
    out-of-fold R-loss; for held-out fold k the importances (or lasso
    support) come from the m-model trained on the same complement.
    """
    from .rlearner import pseudo_outcome

    if mode not in MODES:
        raise ValueError(f"unknown forest mode {mode!r}")
    rng = as_rng(rng)
    params = params or ForestParams()
    folds = folds or nuisances.folds
    p = data.p
    z, v = pseudo_outcome(data, nuisances)
    grid = tuple(DEFAULT_GRIDS[mode] if grid is None else grid)

    imps = nuisances.m_importance_by_fold
    if mode in ("pretrained", "prescreened") and len(imps) != folds.k:
        raise ValueError(f"mode {mode!r} needs forest importances from the m-model on every fold")
    if mode == "lasso_prescreened":
        if lasso_coefficients_by_fold is None:
            lasso_coefficients_by_fold = nuisances.m_coefficients_by_fold
        if len(lasso_coefficients_by_fold) != folds.k:
            raise ValueError("lasso_prescreened needs m-lasso coefficients for every fold")
    full_imp = nuisances.m_importance if imps else None
    full_coef = None
    if mode == "lasso_prescreened":
        full_coef = lasso_coefficients_full
        if full_coef is None:
            full_coef = getattr(nuisances, "m_coefficients_full", None)
        if full_coef is None:
            full_coef = np.zeros(p)
            for c in lasso_coefficients_by_fold:
                full_coef[np.asarray(c) != 0] = 1.0

    scores = []
    for value in grid:
        if mode == "prescreened" and any(value / p > imp.max() for imp in imps + [full_imp]):
            continue
        if len(grid) == 1:
            scores.append((np.nan, value))
            break
        oof = np.empty(data.n)
        for k, train, test in folds.splits():
            imp_k = imps[k] if imps else None
            coef_k = lasso_coefficients_by_fold[k] if mode == "lasso_prescreened" else None
            probs = _mode_probs(mode, value, imp_k, coef_k, p)
            forest = fit_regression_forest(data.x[train], z[train], v[train], params, probs, rng.child(1, k))
            oof[test] = forest.predict(data.x[test])
        scores.append((float((v * (z - oof) ** 2).mean()), value))
    if not scores:
        raise ValueError("no feasible grid value (lower the prescreening threshold)")
    # ties: first grid value wins
    best_loss, best_value = min(scores, key=lambda s: (s[0] if not np.isnan(s[0]) else np.inf))
    probs = _mode_probs(mode, best_value, full_imp, full_coef, p)
    forest = fit_regression_forest(data.x, z, v, params, probs, rng.child(0))
    return CATEModel(
        kind="forest",
        predictor=forest,
        cv_rloss=best_loss,
        hyperparameters={"mode": mode, "value": best_value, "n_trees": params.n_trees},
        feature_names=data.feature_names,
        diagnostics={"cv_rloss_by_value": {s[1]: s[0] for s in scores}},
    )
