"""Figures and tables from replication records.

Every figure writes ``<id>.svg`` and a companion ``<id>.csv`` holding the
plotted numbers; tables write ``<id>.csv`` and a Markdown rendering.
Normalizing figures divide by the median of a baseline estimator within
each setting. The baseline is the first estimator in the records (the
first one listed in the config) unless ``baseline`` is given.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..evaluation import aggregate, rejection_rate  # noqa: E402

plt.rcParams["svg.hashsalt"] = "rpretrain"  # stable element ids across runs
plt.rcParams["svg.fonttype"] = "none"

FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "table1", "table2", "supp_dr")


class MissingSeriesError(ValueError):
    pass


# -- record helpers ----------------------------------------------------------------------

def _ok(records):
    return [r for r in records if not r.get("error")]


def _ordered(values):
    return list(OrderedDict.fromkeys(values))


def setting_params(label: str) -> dict:
    """``"overlap_fraction=0.5;n=500"`` -> ``{"overlap_fraction": 0.5, "n": 500}``."""
    if not label or label == "base":
        return {}
    out = {}
    for part in label.split(";"):
        k, v = part.split("=", 1)
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def _settings(records):
    return _ordered((r["setting_idx"], r["setting"]) for r in records)


def _x_value(label):
    """First grid value of a setting label (for line plots over the grid)."""
    params = setting_params(label)
    return next(iter(params.values())) if params else 0, (next(iter(params)) if params else "setting")


def _values(records, estimator, setting_idx, metric):
    return np.array([float(r[metric]) for r in records
                     if r["estimator"] == estimator and r["setting_idx"] == setting_idx
                     and r.get(metric) is not None], dtype=float)


def _require(records, estimators=None, metric=None, what=""):
    if not records:
        raise MissingSeriesError("no records to plot")
    ok = _ok(records)
    if not ok:
        raise MissingSeriesError("every record carries an error; nothing to plot")
    present = set(r["estimator"] for r in ok)
    for e in estimators or ():
        if e not in present:
            raise MissingSeriesError(f"{what}: estimator series {e!r} missing from records")
    if metric is not None and not any(r.get(metric) is not None for r in ok):
        raise MissingSeriesError(f"{what}: no records carry {metric!r}")
    return ok


def _baseline(ok, baseline):
    names = _ordered(r["estimator"] for r in ok)
    base = baseline or names[0]
    if base not in names:
        raise MissingSeriesError(f"baseline estimator {base!r} missing from records")
    return base, [n for n in names if n != base]


def _sweeps(ok):
    """``{sweep name: [(alpha, estimator label), ...]}`` for ``name@alpha`` labels."""
    out = OrderedDict()
    for name in _ordered(r["estimator"] for r in ok):
        if "@" in name:
            base, a = name.rsplit("@", 1)
            out.setdefault(base, []).append((float(a), name))
    for v in out.values():
        v.sort()
    return out


def _save(fig, out: Path, fid: str, rows: list, columns=None) -> dict:
    from .runner import write_csv

    out.mkdir(parents=True, exist_ok=True)
    svg = out / f"{fid}.svg"
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)
    csv_path = out / f"{fid}.csv"
    write_csv(rows, csv_path, columns or (list(rows[0]) if rows else []))
    return {"svg": svg, "csv": csv_path}


def _quant(v):
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return float(med), float(q25), float(q75)


# -- grouped boxplots normalized by a baseline ---------------------------------------------

def _normalized_boxes(ok, baseline, title, fid, out, panels_by="setting"):
    base, others = _baseline(ok, baseline)
    settings = _settings(ok)
    rows, data = [], {}
    for si, label in settings:
        b = _values(ok, base, si, "mse")
        if b.size == 0:
            raise MissingSeriesError(f"{fid}: baseline {base!r} has no MSE in setting {label!r}")
        med = float(np.median(b))
        for name in [base] + others:
            v = _values(ok, name, si, "mse") / med
            if v.size == 0:
                continue
            data[(si, name)] = v
            m, lo, hi = _quant(v)
            rows.append({"setting": label, "estimator": name, "n_reps": int(v.size), "norm_mse_median": m,
                         "norm_mse_q25": lo, "norm_mse_q75": hi, "baseline": base, "baseline_median_mse": med})
    names = [base] + others
    if panels_by == "setting":
        fig, axes = plt.subplots(1, len(settings), figsize=(3.2 * len(settings) + 1, 3.6), squeeze=False,
                                 sharey=True)
        for ax, (si, label) in zip(axes[0], settings):
            present = [n for n in names if (si, n) in data]
            ax.boxplot([data[(si, n)] for n in present], showfliers=False)
            ax.set_xticks(range(1, len(present) + 1), present, rotation=45, ha="right", fontsize=7)
            ax.axhline(1.0, color="grey", ls=":", lw=0.8)
            ax.set_title(label, fontsize=8)
        axes[0][0].set_ylabel(f"MSE / median MSE of {base}")
    else:  # one panel per non-baseline estimator, settings on the x axis
        fig, axes = plt.subplots(1, max(1, len(others)), figsize=(3.4 * max(1, len(others)) + 1, 3.6),
                                 squeeze=False, sharey=True)
        for ax, name in zip(axes[0], others):
            present = [(si, label) for si, label in settings if (si, name) in data]
            ax.boxplot([data[(si, name)] for si, _ in present], showfliers=False)
            ax.set_xticks(range(1, len(present) + 1), [lab for _, lab in present], rotation=45, ha="right",
                          fontsize=7)
            ax.axhline(1.0, color="grey", ls=":", lw=0.8)
            ax.set_title(name, fontsize=9)
        axes[0][0].set_ylabel(f"MSE / median MSE of {base}")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, out, fid, rows)


# -- figure builders -----------------------------------------------------------------------

def fig2(records, out, **kw):
    """CV R-loss and test MSE against alpha (medians over reps), dashed lines at the minima."""
    ok = _require(records, metric="cv_rloss", what="fig2")
    sweeps = _sweeps(ok)
    if not sweeps:
        raise MissingSeriesError("fig2: needs an alpha sweep (estimator labels 'name@alpha')")
    rows = []
    settings = _settings(ok)
    fig, axes = plt.subplots(2, len(settings), figsize=(3.6 * len(settings) + 1, 5.5), squeeze=False)
    for col, (si, label) in enumerate(settings):
        for sweep, members in sweeps.items():
            alphas = np.array([a for a, _ in members])
            rl = np.array([np.median(_values(ok, n, si, "cv_rloss")) for _, n in members])
            ms = np.array([np.median(_values(ok, n, si, "mse")) for _, n in members])
            ar, am = alphas[int(np.argmin(rl))], alphas[int(np.argmin(ms))]
            for a, r_, m_ in zip(alphas, rl, ms):
                rows.append({"setting": label, "sweep": sweep, "alpha": a, "rloss_median": r_, "mse_median": m_,
                             "argmin_rloss": ar, "argmin_mse": am})
            for ax, y, best, name in ((axes[0][col], rl, ar, "CV R-loss"), (axes[1][col], ms, am, "test MSE")):
                ax.plot(alphas, y, marker="o", ms=3, label=sweep)
                ax.axvline(best, ls="--", lw=0.8, color=ax.lines[-1].get_color())
                ax.set_ylabel(f"median {name}")
        axes[0][col].set_title(label, fontsize=8)
        axes[1][col].set_xlabel("alpha")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out, "fig2", rows)


def fig3(records, out, baseline=None, **kw):
    """(a) MSE normalized by the baseline median per setting; (b) median ratio
    of each pretrained variant to the baseline across the grid."""
    ok = _require(records, metric="mse", what="fig3")
    base, others = _baseline(ok, baseline)
    settings = _settings(ok)
    rows, series = [], {}
    fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(10, 3.8))
    box_data, box_labels = [], []
    for si, label in settings:
        med = float(np.median(_values(ok, base, si, "mse")))
        for name in [base] + others:
            v = _values(ok, name, si, "mse") / med
            if not v.size:
                continue
            m, lo, hi = _quant(v)
            x, xname = _x_value(label)
            rows.append({"setting": label, "x": x, "estimator": name, "n_reps": int(v.size), "norm_mse_median": m,
                         "norm_mse_q25": lo, "norm_mse_q75": hi, "baseline": base})
            box_data.append(v)
            box_labels.append(f"{name}\n{label}")
            if name != base:
                series.setdefault(name, []).append((x, m))
    ax_a.boxplot(box_data, showfliers=False)
    ax_a.set_xticks(range(1, len(box_labels) + 1), box_labels, rotation=60, ha="right", fontsize=6)
    ax_a.axhline(1.0, color="grey", ls=":", lw=0.8)
    ax_a.set_ylabel(f"MSE / median MSE of {base}")
    ax_a.set_title("(a) normalized MSE", fontsize=9)
    xname = _x_value(settings[0][1])[1]
    for name, pts in series.items():
        pts.sort(key=lambda t: t[0])
        ax_b.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax_b.axhline(1.0, color="grey", ls=":", lw=0.8)
    ax_b.set_xlabel(xname)
    ax_b.set_ylabel("median normalized MSE")
    ax_b.set_title("(b) across the grid", fontsize=9)
    ax_b.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out, "fig3", rows)


def fig4(records, out, **kw):
    """Per setting: median CV R-loss and test MSE against alpha, each divided
    by its own median at alpha = 1, with IQR bands."""
    ok = _require(records, metric="cv_rloss", what="fig4")
    sweeps = _sweeps(ok)
    if not sweeps:
        raise MissingSeriesError("fig4: needs an alpha sweep (estimator labels 'name@alpha')")
    settings = _settings(ok)
    rows = []
    fig, axes = plt.subplots(1, len(settings), figsize=(3.6 * len(settings) + 1, 3.6), squeeze=False)
    for ax, (si, label) in zip(axes[0], settings):
        for sweep, members in sweeps.items():
            alphas = np.array([a for a, _ in members])
            ref_name = members[-1][1]  # largest alpha, normally 1
            for metric, style in (("cv_rloss", "-"), ("mse", "--")):
                ref = float(np.median(_values(ok, ref_name, si, metric)))
                q = np.array([_quant(_values(ok, n, si, metric) / ref) for _, n in members])
                best = alphas[int(np.argmin(q[:, 0]))]
                for a, (m, lo, hi) in zip(alphas, q):
                    rows.append({"setting": label, "sweep": sweep, "metric": metric, "alpha": a, "median": m,
                                 "q25": lo, "q75": hi, "argmin": best})
                line = ax.plot(alphas, q[:, 0], style, marker="o", ms=3, label=f"{sweep} {metric}")[0]
                ax.fill_between(alphas, q[:, 1], q[:, 2], alpha=0.15, color=line.get_color())
                ax.axvline(best, ls=":", lw=0.8, color=line.get_color())
        ax.set_title(label, fontsize=8)
        ax.set_xlabel("alpha")
    axes[0][0].set_ylabel("relative to alpha = 1")
    axes[0][0].legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, out, "fig4", rows)


def fig5(records, out, toc_rows=None, **kw):
    """TOC curves averaged over reps with averaged 95% normal intervals (dashed)."""
    _require(records, what="fig5")
    if not toc_rows:
        raise MissingSeriesError("fig5: no TOC curves recorded (set toc: true on the estimators)")
    settings = _ordered((r["setting_idx"], r["setting"]) for r in toc_rows)
    names = _ordered(r["estimator"] for r in toc_rows)
    rows = []
    fig, axes = plt.subplots(1, len(settings), figsize=(3.8 * len(settings) + 1, 3.6), squeeze=False, sharey=True)
    for ax, (si, label) in zip(axes[0], settings):
        for name in names:
            sel = [r for r in toc_rows if r["setting_idx"] == si and r["estimator"] == name]
            if not sel:
                continue
            qs = sorted(set(r["q"] for r in sel))
            by_q = {q: [r for r in sel if r["q"] == q] for q in qs}
            toc = np.array([np.mean([r["toc"] for r in by_q[q]]) for q in qs])
            lo = np.array([np.nanmean([r["ci_lo"] if r["ci_lo"] is not None else np.nan for r in by_q[q]]) for q in qs])
            hi = np.array([np.nanmean([r["ci_hi"] if r["ci_hi"] is not None else np.nan for r in by_q[q]]) for q in qs])
            for q, t, a, b in zip(qs, toc, lo, hi):
                rows.append({"setting": label, "estimator": name, "q": q, "toc_mean": t, "ci_lo_mean": a,
                             "ci_hi_mean": b, "n_reps": len(by_q[q])})
            line = ax.plot(qs, toc, label=name)[0]
            ax.plot(qs, lo, "--", lw=0.7, color=line.get_color())
            ax.plot(qs, hi, "--", lw=0.7, color=line.get_color())
        ax.axhline(0.0, color="grey", lw=0.6)
        ax.set_xlabel("q (fraction treated)")
        ax.set_title(label, fontsize=8)
    axes[0][0].set_ylabel("TOC(q)")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out, "fig5", rows)


def fig6(records, out, **kw):
    """Rejection rate of the sequential AUTOC test across the grid, bootstrap 95% CIs."""
    ok = _require(records, metric="reject", what="fig6")
    names = _ordered(r["estimator"] for r in ok if r.get("reject") is not None)
    settings = _settings(ok)
    rows = []
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for ei, name in enumerate(names):
        pts = []
        for si, label in settings:
            rej = [bool(r["reject"]) for r in ok if r["setting_idx"] == si and r["estimator"] == name
                   and r.get("reject") is not None]
            if not rej:
                continue
            rr = rejection_rate(rej, rng=ei * 1000 + si)
            x, xname = _x_value(label)
            pts.append((x, rr["rate"], rr["ci_lo"], rr["ci_hi"]))
            rows.append({"setting": label, "x": x, "estimator": name, "power": rr["rate"], "ci_lo": rr["ci_lo"],
                         "ci_hi": rr["ci_hi"], "n_reps": rr["n"]})
        pts.sort()
        xs, ys, lo, hi = (np.array(c, dtype=float) for c in zip(*pts))
        ax.errorbar(xs, ys, yerr=[ys - lo, hi - ys], marker="o", capsize=3, label=name)
    ax.set_xlabel(_x_value(settings[0][1])[1])
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out, "fig6", rows)


def fig7(records, out, baseline=None, **kw):
    """Normalized MSE, support size, FDR and Jaccard across the grid (median + IQR)."""
    ok = _require(records, metric="fdr", what="fig7")
    base, others = _baseline(ok, baseline)
    settings = _settings(ok)
    metrics = ("mse", "support_size", "fdr", "jaccard")
    rows = []
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.5))
    for name in [base] + others:
        series = {m: [] for m in metrics}
        for si, label in settings:
            x, _ = _x_value(label)
            for m in metrics:
                v = _values(ok, name, si, m)
                if not v.size:
                    continue
                if m == "mse":
                    v = v / float(np.median(_values(ok, base, si, "mse")))
                med, lo, hi = _quant(v)
                series[m].append((x, med, lo, hi))
                rows.append({"setting": label, "x": x, "estimator": name, "metric": "norm_mse" if m == "mse" else m,
                             "median": med, "q25": lo, "q75": hi})
        for ax, m in zip(axes, metrics):
            pts = sorted(series[m])
            if not pts:
                continue
            xs, med, lo, hi = (np.array(c, dtype=float) for c in zip(*pts))
            ax.errorbar(xs, med, yerr=[med - lo, hi - med], marker="o", capsize=2, label=name)
    for ax, title in zip(axes, ("MSE / baseline median", "support size", "FDR", "Jaccard")):
        ax.set_title(title, fontsize=9)
        ax.set_xlabel(_x_value(settings[0][1])[1])
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out, "fig7", rows)


def fig8(records, out, baseline=None, **kw):
    """Forest variants: MSE normalized by the plain forest, one panel per variant."""
    ok = _require(records, metric="mse", what="fig8")
    return _normalized_boxes(ok, baseline, "forest variants relative to the plain forest", "fig8", out,
                             panels_by="estimator")


def fig9(records, out, baseline=None, **kw):
    """Non-linear setups: MSE normalized by the baseline R-lasso, one panel per setup."""
    ok = _require(records, metric="mse", what="fig9")
    return _normalized_boxes(ok, baseline, "non-linear setups", "fig9", out, panels_by="setting")


def supp_dr(records, out, baseline=None, **kw):
    """DR-learner pretraining sources normalized by the unpretrained DR-lasso."""
    ok = _require(records, metric="mse", what="supp_dr")
    return _normalized_boxes(ok, baseline, "DR-learner pretraining sources", "supp_dr", out,
                             panels_by="setting")


def _fmt(row, m):
    med = row.get(f"{m}_median")
    if med is None:
        return ""
    return f"{med:.2f} ({row[f'{m}_ci_lo']:.2f}, {row[f'{m}_ci_hi']:.2f})"


def _write_table(rows, out, fid, columns, md_header, md_rows):
    from .runner import write_csv

    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{fid}.csv"
    write_csv(rows, csv_path, columns)
    md = out / f"{fid}.md"
    lines = ["| " + " | ".join(md_header) + " |", "|" + "---|" * len(md_header)]
    lines += ["| " + " | ".join(r) + " |" for r in md_rows]
    md.write_text("\n".join(lines) + "\n")
    return {"csv": csv_path, "md": md}


def table1(records, out, **kw):
    """Median and bootstrap CI of MSE, Jaccard, FDR and support size per estimator."""
    ok = _require(records, metric="fdr", what="table1")
    metrics = ("mse", "jaccard", "fdr", "support_size")
    agg = aggregate(ok, metrics=metrics, by=("setting", "estimator"), rng=0)
    order = _ordered(r["estimator"] for r in ok)
    agg.sort(key=lambda r: (str(r["setting"]), order.index(r["estimator"])))
    columns = ["setting", "estimator", "n_reps"] + [f"{m}_{s}" for m in metrics
                                                    for s in ("median", "ci_lo", "ci_hi")]
    md_rows = [[r["setting"], r["estimator"]] + [_fmt(r, m) for m in metrics] for r in agg]
    return _write_table(agg, out, "table1", columns,
                        ["setting", "estimator", "MSE", "Jaccard", "FDR", "support size"], md_rows)


def table2(records, out, **kw):
    """Median test MSE (bootstrap CI) for each setup and estimator."""
    ok = _require(records, metric="mse", what="table2")
    agg = aggregate(ok, metrics=("mse",), by=("setting", "estimator"), rng=0)
    order = _ordered(r["estimator"] for r in ok)
    settings = [lab for _, lab in _settings(ok)]
    agg.sort(key=lambda r: (settings.index(r["setting"]), order.index(r["estimator"])))
    columns = ["setting", "estimator", "n_reps", "mse_median", "mse_ci_lo", "mse_ci_hi", "mse_q25", "mse_q75"]
    cells = {(r["setting"], r["estimator"]): _fmt(r, "mse") for r in agg}
    md_rows = [[name] + [cells.get((s, name), "") for s in settings] for name in order]
    return _write_table(agg, out, "table2", columns, ["estimator"] + settings, md_rows)


BUILDERS = {"fig2": fig2, "fig3": fig3, "fig4": fig4, "fig5": fig5, "fig6": fig6, "fig7": fig7, "fig8": fig8,
            "fig9": fig9, "table1": table1, "table2": table2, "supp_dr": supp_dr}


def make_figure(records, figure_id: str, output_dir, *, toc_rows=None, baseline=None) -> dict:
    """Render one figure or table; returns the written paths by type."""
    if figure_id not in BUILDERS:
        raise ValueError(f"unknown figure id {figure_id!r}; choose from {FIGURES}")
    if not records:
        raise MissingSeriesError("no records to plot")
    return BUILDERS[figure_id](list(records), Path(output_dir), toc_rows=toc_rows, baseline=baseline)


__all__ = ["make_figure", "MissingSeriesError", "setting_params", "FIGURES"]
