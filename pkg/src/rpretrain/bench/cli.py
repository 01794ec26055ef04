"""Command line: ``rpretrain-bench {run, figure, validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .figures import FIGURES, MissingSeriesError, make_figure
from .runner import WORKERS_ENV, read_records, read_toc, run_experiment


def _parser():
    p = argparse.ArgumentParser(prog="rpretrain-bench", description="Simulation benchmarks for pretrained CATE learners.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--reps", type=int, help="override the config's replication count")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    run.add_argument("--output-dir", type=Path, help="override the config's output directory")
    run.add_argument("--no-figures", action="store_true", help="skip rendering the config's figures")

    fig = sub.add_parser("figure", help="render a figure or table from a records CSV")
    fig.add_argument("--id", required=True, choices=FIGURES)
    fig.add_argument("--records", required=True, type=Path)
    fig.add_argument("--toc", type=Path, help="TOC curves CSV (fig5; default: toc_curves.csv next to the records)")
    fig.add_argument("--out", type=Path, help="output directory (default: the records' directory)")
    fig.add_argument("--baseline", help="estimator used for normalization (default: first in the records)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True, type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            cfg = ExperimentConfig.load(args.config)
            n_settings = len(cfg.settings())
            print(f"ok: {cfg.name}: {n_settings} setting(s) x {cfg.reps} reps, {len(cfg.estimators)} estimator(s)")
            return 0
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config).with_overrides(args.reps, args.seed, args.output_dir)
            res = run_experiment(cfg, workers=args.workers, render=not args.no_figures)
            n_err = sum(1 for r in res.records if r.get("error"))
            print(f"{cfg.name}: {len(res.records)} records ({res.n_computed} replications computed, "
                  f"{n_err} failed estimator fits)")
            for key, path in res.paths.items():
                print(f"  {key}: {path}")
            return 0
        if args.command == "figure":
            records = read_records(args.records)
            toc_path = args.toc or args.records.with_name("toc_curves.csv")
            toc = read_toc(toc_path) if toc_path.exists() else None
            paths = make_figure(records, args.id, args.out or args.records.parent, toc_rows=toc,
                                baseline=args.baseline)
            for key, path in paths.items():
                print(f"{key}: {path}")
            return 0
    except (ConfigError, MissingSeriesError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
