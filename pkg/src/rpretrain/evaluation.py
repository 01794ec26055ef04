"""Evaluation: CATE error, support recovery, TOC/AUTOC and the sequential
cross-fold heterogeneity test, plus replicate aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .data import Dataset, FoldAssignment, as_rng, make_folds

DEFAULT_Q = np.round(np.arange(1, 51) / 50, 10)


def cate_mse(tau_hat, true_tau) -> float:
    if true_tau is None:
        raise ValueError("no oracle effect available for this dataset")
    tau_hat = np.asarray(tau_hat, dtype=float)
    true_tau = np.asarray(true_tau, dtype=float)
    if tau_hat.shape != true_tau.shape:
        raise ValueError("tau_hat and true_tau lengths differ")
    return float(np.mean((tau_hat - true_tau) ** 2))


def normalize_by_baseline(values, baseline_values) -> np.ndarray:
    """Divide by the median of the baseline's replicate values."""
    med = float(np.median(baseline_values))
    if med <= 0:
        raise ValueError("baseline median must be positive to normalize")
    return np.asarray(values, dtype=float) / med


@dataclass(frozen=True)
class SupportMetrics:
    size: int
    fdr: float
    jaccard: float
    power_select: float


def support_metrics(estimated, truth) -> SupportMetrics:
    est = {int(i) for i in np.asarray(estimated, dtype=int).ravel()}
    tru = {int(i) for i in np.asarray(truth, dtype=int).ravel()}
    inter = len(est & tru)
    union = len(est | tru)
    fdr = (len(est) - inter) / len(est) if est else 0.0
    jac = inter / union if union else 1.0
    power = inter / len(tru) if tru else 1.0
    return SupportMetrics(len(est), fdr, jac, power)


# -- TOC / AUTOC ------------------------------------------------------------------

@dataclass
class TocCurve:
    q_grid: np.ndarray
    toc: np.ndarray
    autoc: float
    autoc_se: float = float("nan")
    toc_se: np.ndarray | None = None

    def ci(self, level=0.95):
        z = norm.ppf(0.5 + level / 2)
        se = self.toc_se if self.toc_se is not None else np.full(self.toc.size, np.nan)
        return self.toc - z * se, self.toc + z * se

    def to_rows(self) -> list[dict]:
        lo, hi = self.ci()
        return [{"q": float(q), "toc": float(t), "ci_lo": float(a), "ci_hi": float(b)}
                for q, t, a, b in zip(self.q_grid, self.toc, lo, hi)]


def _check_q(q_grid):
    q = np.asarray(q_grid, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any(q <= 0) or np.any(q > 1):
        raise ValueError("q_grid must lie in (0, 1]")
    if np.any(np.diff(q) <= 0):
        raise ValueError("q_grid must be strictly ascending")
    if q[-1] != 1.0:
        raise ValueError("q_grid must include 1")
    return q


def _toc_values(order, psi, q):
    """TOC on a precomputed ranking (descending tau_hat, stable)."""
    n = psi.size
    cum = np.cumsum(psi[order])
    k = np.maximum(1, np.ceil(q * n - 1e-9).astype(int))
    k = np.minimum(k, n)
    toc = cum[k - 1] / k - cum[-1] / n
    toc[k == n] = 0.0
    return toc


def _autoc(q, toc):
    # trapezoid over the grid plus TOC(q1) held constant on [0, q1]
    return float(q[0] * toc[0] + np.trapezoid(toc, q))


def toc_curve(tau_hat_test, dr_scores_test, q_grid=DEFAULT_Q, *, n_boot: int = 500, rng=None) -> TocCurve:
    """TOC(q) = mean AIPW score in the top-q fraction ranked by tau_hat, minus
    the overall mean.

    Ranking ties are broken by row order. ``autoc_se`` and pointwise TOC
    standard errors come from a nonparametric bootstrap of rows
    (``n_boot=0`` skips it).
    """
    tau = np.asarray(tau_hat_test, dtype=float).ravel()
    psi = np.asarray(dr_scores_test, dtype=float).ravel()
    if tau.size != psi.size:
        raise ValueError("tau_hat and scores lengths differ")
    if tau.size < 2:
        raise ValueError("need at least two rows")
    q = _check_q(q_grid)
    order = np.argsort(-tau, kind="stable")
    toc = _toc_values(order, psi, q)
    autoc = _autoc(q, toc)
    se, toc_se = float("nan"), None
    if n_boot > 0:
        gen = as_rng(rng).generator()
        n = tau.size
        autocs = np.empty(n_boot)
        tocs = np.empty((n_boot, q.size))
        for b in range(n_boot):
            idx = np.sort(gen.integers(0, n, n))  # sorted keeps stable tie order
            o = np.argsort(-tau[idx], kind="stable")
            tocs[b] = _toc_values(o, psi[idx], q)
            autocs[b] = _autoc(q, tocs[b])
        se = float(autocs.std(ddof=1))
        toc_se = tocs.std(axis=0, ddof=1)
    return TocCurve(q, toc, autoc, se, toc_se)


@dataclass
class SequentialTestResult:
    autoc_estimate: float
    ci: tuple
    reject: bool
    statistic: float
    fold_autoc: np.ndarray = field(default_factory=lambda: np.array([]))
    fold_se: np.ndarray = field(default_factory=lambda: np.array([]))
    fold_t: np.ndarray = field(default_factory=lambda: np.array([]))


def autoc_test_sequential(data: Dataset, model_factory: Callable, k: int = 5, level: float = 0.05, *,
                          folds: FoldAssignment | None = None, scores=None, q_grid=DEFAULT_Q,
                          n_boot: int = 500, rng=None) -> SequentialTestResult:
    """Cross-fold test for effect heterogeneity through the AUTOC.

    For each fold, ``model_factory(train_data, rng)`` returns a fitted model
    whose ``predict`` ranks the held-out rows; the fold AUTOC is computed from
    held-out AIPW scores. ``scores`` (length n) may be supplied; otherwise
    they are cross-fitted on the same folds. The fold statistics
    t_k = autoc_k / se_k are combined as S = sum t_k / sqrt(K) and the test
    rejects when S exceeds the one-sided normal quantile.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = as_rng(rng)
    if folds is None:
        folds = make_folds(data.n, k, data.w, rng.child(0))
    if folds.k != k:
        raise ValueError("folds.k differs from k")
    if scores is None:
        from .drlearner import aipw_pseudo_outcomes

        e = data.known_propensity
        scores = aipw_pseudo_outcomes(data, folds, e_hat=e, rng=rng.child(1)).psi
    psi = np.asarray(scores, dtype=float)
    est, ses = np.empty(k), np.empty(k)
    for j, train, test in folds.splits():
        try:
            model = model_factory(data.subset(train), rng.child(2, j))
            tau = model.predict(data.x[test])
            c = toc_curve(tau, psi[test], q_grid, n_boot=n_boot, rng=rng.child(3, j))
        except Exception as exc:  # noqa: BLE001 - re-raised with fold context
            raise RuntimeError(f"sequential AUTOC test failed on fold {j}: {exc}") from exc
        est[j], ses[j] = c.autoc, c.autoc_se
    if np.any(~np.isfinite(ses)) or np.any(ses <= 0):
        ses = np.where(np.isfinite(ses) & (ses > 0), ses, np.inf)
    t = est / ses
    S = float(t.sum() / math.sqrt(k))
    z = norm.ppf(1 - level)
    pooled = float(est.mean())
    pooled_se = float(math.sqrt(np.sum(np.where(np.isfinite(ses), ses, 0.0) ** 2)) / k)
    zc = norm.ppf(1 - level / 2)
    return SequentialTestResult(pooled, (pooled - zc * pooled_se, pooled + zc * pooled_se), bool(S > z), S,
                                est, ses, t)


# -- aggregation ------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    n: int
    median: float
    q25: float
    q75: float
    ci_lo: float
    ci_hi: float
    mean: float


def summarize(values: Sequence[float], *, n_boot: int = 2000, rng=None, level: float = 0.95) -> Summary:
    """Median, IQR and a percentile-bootstrap CI of the median."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise ValueError("need at least two finite values to summarize")
    gen = as_rng(rng).generator()
    boots = np.median(v[gen.integers(0, v.size, (n_boot, v.size))], axis=1)
    a = (1 - level) / 2
    lo, hi = np.quantile(boots, [a, 1 - a])
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return Summary(int(v.size), float(med), float(q25), float(q75), float(lo), float(hi), float(v.mean()))


def aggregate(records: Sequence[dict], metrics=("mse",), by=("setting", "estimator"), *, n_boot: int = 2000,
              rng=None, normalize_to: str | None = None) -> list[dict]:
    """Group replicate records and summarize each metric.

    ``normalize_to`` names a baseline estimator: each group's metric values
    are divided by the baseline's median within the same setting (adds
    ``<metric>_norm`` summaries).
    """
    if len(records) < 2:
        raise ValueError("aggregate needs at least two records")
    rng = as_rng(rng)
    recs = [r for r in records if not r.get("error")]
    groups: dict[tuple, list[dict]] = {}
    for r in recs:
        groups.setdefault(tuple(r.get(b) for b in by), []).append(r)
    baseline_median = {}
    if normalize_to is not None:
        for key, rows in groups.items():
            if key[by.index("estimator")] == normalize_to:
                setting = tuple(x for b, x in zip(by, key) if b != "estimator")
                for m in metrics:
                    baseline_median[(setting, m)] = float(np.nanmedian([float(r[m]) for r in rows]))
    out = []
    for gi, (key, rows) in enumerate(sorted(groups.items(), key=lambda kv: tuple(str(x) for x in kv[0]))):
        row = dict(zip(by, key))
        row["n_reps"] = len(rows)
        for m in metrics:
            vals = [float(r[m]) for r in rows if r.get(m) is not None and r.get(m) != ""]
            if len(vals) < 2:
                continue
            s = summarize(vals, n_boot=n_boot, rng=rng.child(gi, 0))
            row.update({f"{m}_median": s.median, f"{m}_q25": s.q25, f"{m}_q75": s.q75,
                        f"{m}_ci_lo": s.ci_lo, f"{m}_ci_hi": s.ci_hi, f"{m}_mean": s.mean})
            if normalize_to is not None:
                setting = tuple(x for b, x in zip(by, key) if b != "estimator")
                base = baseline_median.get((setting, m))
                if base:
                    sn = summarize(np.asarray(vals) / base, n_boot=n_boot, rng=rng.child(gi, 1))
                    row.update({f"{m}_norm_median": sn.median, f"{m}_norm_q25": sn.q25,
                                f"{m}_norm_q75": sn.q75, f"{m}_norm_ci_lo": sn.ci_lo,
                                f"{m}_norm_ci_hi": sn.ci_hi})
        out.append(row)
    return out


def rejection_rate(rejects: Sequence[bool], *, n_boot: int = 2000, rng=None) -> dict:
    """Power or size estimate with a percentile-bootstrap 95% interval."""
    r = np.asarray(rejects, dtype=float)
    if r.size == 0:
        raise ValueError("no test outcomes")
    gen = as_rng(rng).generator()
    boots = r[gen.integers(0, r.size, (n_boot, r.size))].mean(axis=1)
    lo, hi = np.quantile(boots, [0.025, 0.975])
    return {"rate": float(r.mean()), "ci_lo": float(lo), "ci_hi": float(hi), "n": int(r.size)}
