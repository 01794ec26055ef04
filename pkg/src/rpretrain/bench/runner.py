"""Replication runner: deterministic, parallel, resumable.

Replication ``r`` of setting ``s`` draws everything from the stream
``SeededRng(seed, (s, r))``, so its records do not depend on which worker
runs it or in which order. Finished replications are appended to
``journal.jsonl`` as they complete; rerunning into the same output
directory skips them. Records are always written sorted by
``(setting_idx, rep_id, estimator order)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from ..data import SeededRng
from ..dgp import DgpSpec, simulate
from ..evaluation import DEFAULT_Q, autoc_test_sequential, cate_mse, support_metrics, toc_curve
from .config import ExperimentConfig
from .estimators import Context, fit_estimator, heldout_scores, support_truth, tuned_model

log = logging.getLogger(__name__)

WORKERS_ENV = "RPRETRAIN_WORKERS"
RECORD_COLUMNS = (
    "rep_id", "estimator", "alpha_chosen", "lambda_chosen", "mse", "support_size", "fdr", "jaccard",
    "autoc", "reject", "wall_time_ms", "seed_used", "setting_idx", "setting", "kind", "cv_rloss", "error",
)
TOC_COLUMNS = ("setting_idx", "setting", "rep_id", "estimator", "q", "toc", "ci_lo", "ci_hi")
JOURNAL = "journal.jsonl"


@dataclass
class RunResult:
    records: list
    toc_rows: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)
    n_computed: int = 0


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def _blank(spec, name, setting_idx, label, rep_id, seed_used):
    return {"rep_id": rep_id, "estimator": name, "alpha_chosen": None, "lambda_chosen": None, "mse": None,
            "support_size": None, "fdr": None, "jaccard": None, "autoc": None, "reject": None,
            "wall_time_ms": None, "seed_used": seed_used, "setting_idx": setting_idx, "setting": label,
            "kind": spec["kind"], "cv_rloss": None, "error": ""}


def run_replication(cfg_dict: dict, setting_idx: int, rep_id: int) -> dict:
    """Run every estimator on one simulated replication. Never raises for
    estimator failures: those produce records with ``error`` set."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    setting = cfg.settings()[setting_idx]
    label = cfg.setting_labels()[setting_idx]
    rng = SeededRng(int(cfg.seed), (setting_idx, rep_id))
    seed_used = rng.integer_seed()
    sim = simulate(DgpSpec(**setting, seed=seed_used), rng.child(0))
    ctx = Context(sim.train, int(cfg.folds), rng.child(1), cfg.propensity)
    records, toc_rows = [], []
    psi_test = None
    for ei, spec in enumerate(cfg.estimators):
        t0 = time.perf_counter()
        try:
            fitted = fit_estimator(ctx, spec)
            test_result = None
            if spec.get("autoc_test"):
                def factory(train, r, spec=spec):
                    return tuned_model(train, spec, int(cfg.folds), r, cfg.propensity)

                test_result = autoc_test_sequential(ctx.data, factory, k=int(cfg.folds),
                                                    level=float(spec.get("level", 0.05)), folds=ctx.folds,
                                                    scores=ctx.aipw().psi, rng=rng.child(3, ei))
            if spec.get("toc") and psi_test is None:
                psi_test = heldout_scores(sim.test, rng.child(2))
            elapsed = (time.perf_counter() - t0) * 1000 / max(1, len(fitted))
            for name, model in fitted:
                rec = _blank(spec, name, setting_idx, label, rep_id, seed_used)
                tau = model.predict(sim.test.x)
                rec.update(alpha_chosen=_num(model.chosen_alpha), lambda_chosen=_num(model.chosen_lambda2),
                           mse=cate_mse(tau, sim.test.true_tau), cv_rloss=_num(model.cv_rloss),
                           wall_time_ms=round(elapsed, 3))
                if support_truth(spec["kind"]):
                    sm = support_metrics(model.active_set, sim.truth.tau_support)
                    rec.update(support_size=sm.size, fdr=sm.fdr, jaccard=sm.jaccard)
                if spec.get("toc"):
                    curve = toc_curve(tau, psi_test, DEFAULT_Q, rng=rng.child(4, ei))
                    rec["autoc"] = curve.autoc
                    toc_rows += [{"setting_idx": setting_idx, "setting": label, "rep_id": rep_id,
                                  "estimator": name, **row} for row in curve.to_rows()]
                if test_result is not None:
                    rec["autoc"] = test_result.autoc_estimate
                    rec["reject"] = bool(test_result.reject)
                records.append(rec)
        except Exception as exc:  # noqa: BLE001 - one failing estimator must not stop the run
            log.warning("setting %d rep %d estimator %s failed: %s", setting_idx, rep_id, spec["name"], exc)
            rec = _blank(spec, spec["name"], setting_idx, label, rep_id, seed_used)
            rec["error"] = f"{type(exc).__name__}: {exc}"
            rec["wall_time_ms"] = round((time.perf_counter() - t0) * 1000, 3)
            records.append(rec)
    return {"setting_idx": setting_idx, "rep_id": rep_id, "records": records, "toc": toc_rows}


# -- journal -------------------------------------------------------------------------

def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Hash of everything that shapes a replication's output (not reps or output_dir)."""
    d = cfg.to_dict()
    for key in ("reps", "output_dir", "paper_reps", "description", "figures", "emit"):
        d.pop(key, None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _read_journal(path: Path, fingerprint: str) -> dict:
    done = {}
    if not path.exists():
        return done
    with path.open() as fh:
        for line in fh:
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                continue  # a line cut short by a crash
            if "fingerprint" in entry:
                if entry["fingerprint"] != fingerprint:
                    raise ValueError(f"{path} was written by a different configuration; "
                                     "use a fresh output directory")
                continue
            done.setdefault((entry["setting_idx"], entry["rep_id"]), entry)
    return done


# -- output ----------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(rows, path, columns):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_cell(r.get(c)) for c in columns])


def _parse(col, text):
    if text == "":
        return "" if col == "error" else None
    if col in ("estimator", "setting", "kind", "error"):
        return text
    if col in ("rep_id", "setting_idx", "seed_used", "support_size"):
        return int(text)
    if col == "reject":
        return text == "1"
    return float(text)


def read_records(path) -> list[dict]:
    """Load a records CSV written by :func:`run_experiment`."""
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_toc(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) if k in ("setting_idx", "rep_id", "setting", "estimator") else float(v)
                 for k, v in row.items()} for row in csv.DictReader(fh)]


def run_experiment(cfg: ExperimentConfig, *, workers: int | None = None, output_dir=None,
                   render: bool = True) -> RunResult:
    """Run all (setting, replication) pairs of ``cfg`` and write the records.

    Files written to the output directory: ``records.csv`` (``emit.csv``),
    ``records.jsonl`` (``emit.jsonl``), ``toc_curves.csv`` when any
    estimator asks for TOC curves, ``config.yaml`` and the journal. With
    ``emit.svg`` and ``render`` the figures listed in ``cfg.figures`` are
    rendered too.
    """
    cfg.validate()
    workers = default_workers() if workers is None else max(1, int(workers))
    out = Path(output_dir or cfg.output_dir or Path("results") / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    fp = config_fingerprint(cfg)
    journal_path = out / JOURNAL
    done = _read_journal(journal_path, fp)
    if not journal_path.exists() or journal_path.stat().st_size == 0:
        journal_path.write_text(json.dumps({"fingerprint": fp}) + "\n")
    tasks = [(s, r) for s in range(len(cfg.settings())) for r in range(int(cfg.reps)) if (s, r) not in done]
    cfg_dict = cfg.to_dict()
    log.info("%s: %d replications to run (%d already done), %d worker(s)", cfg.name, len(tasks), len(done), workers)

    with journal_path.open("a") as journal:
        def keep(entry):
            done[(entry["setting_idx"], entry["rep_id"])] = entry
            journal.write(json.dumps(entry) + "\n")
            journal.flush()

        if workers == 1 or len(tasks) <= 1:
            for s, r in tasks:
                keep(run_replication(cfg_dict, s, r))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_replication, cfg_dict, s, r) for s, r in tasks]
                for fut in as_completed(futures):
                    keep(fut.result())

    keys = sorted(k for k in done if k[1] < int(cfg.reps))
    records = [rec for k in keys for rec in done[k]["records"]]
    toc_rows = [row for k in keys for row in done[k]["toc"]]
    paths = {"journal": journal_path}
    cfg.dump(out / "config.yaml")
    if cfg.emit.get("csv", True):
        paths["records"] = out / "records.csv"
        write_csv(records, paths["records"], RECORD_COLUMNS)
    if cfg.emit.get("jsonl", False):
        paths["records_jsonl"] = out / "records.jsonl"
        with paths["records_jsonl"].open("w") as fh:
            for rec in records:
                fh.write(json.dumps({c: rec.get(c) for c in RECORD_COLUMNS}) + "\n")
    if toc_rows:
        paths["toc"] = out / "toc_curves.csv"
        write_csv(toc_rows, paths["toc"], TOC_COLUMNS)
    result = RunResult(records, toc_rows, paths, len(tasks))
    if render and cfg.emit.get("svg", True) and cfg.figures:
        from .figures import make_figure

        for fig in cfg.figures:
            paths.update({f"{fig}:{k}": v for k, v in make_figure(records, fig, out, toc_rows=toc_rows).items()})
    return result


__all__ = ["RECORD_COLUMNS", "RunResult", "run_experiment", "run_replication", "read_records", "read_toc",
           "write_csv", "default_workers"]
