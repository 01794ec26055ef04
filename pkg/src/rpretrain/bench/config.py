"""Experiment configuration: a YAML document with a fixed schema.

Top-level keys::

    name: str                      # experiment id, also the default output folder
    description: str               # free text (optional)
    paper_reps: int                # replication count in the original study (informational)
    reps: int                      # desk-scale replication count
    folds: int                     # cross-fitting folds (default 5)
    propensity: known | estimated  # use the design's e(x) when it has one, or cross-fit it
    seed: int                      # master seed; rep r of setting s uses stream (s, r)
    output_dir: str                # where records and figures go
    dgp: {family, n, p, snr, ...}  # DgpSpec fields except seed
    grid: {field: [values]}        # optional; cartesian product of DGP overrides = settings
    estimators: [{name, kind, ...}]
    emit: {csv: bool, jsonl: bool, svg: bool}
    figures: [fig2, ...]           # figures rendered after the run

Estimator entries take ``name`` (record label), ``kind`` and kind-specific
parameters (see ``ESTIMATOR_PARAMS``). Any estimator may add
``autoc_test: true`` (sequential AUTOC test on the training data) and
``toc: true`` (test-set TOC curve).
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..dgp import DgpSpec

COMMON_PARAMS = {"name", "kind", "autoc_test", "toc", "level"}
ESTIMATOR_PARAMS = {
    "rlasso": {"alpha_grid", "m_learner", "refit_rule", "n_lambda", "ratio"},
    "uni_rlasso": {"alpha_grid", "m_learner", "refit_rule", "n_lambda", "ratio"},
    "rlasso_sweep": {"alpha_grid", "m_learner", "refit_rule", "n_lambda", "ratio"},
    "uni_rlasso_sweep": {"alpha_grid", "m_learner", "refit_rule", "n_lambda", "ratio"},
    "dr_lasso": {"alpha_grid", "source", "n_lambda", "ratio"},
    "rboost": {"M_grid", "rates", "m_learner"},
    "forest": {"mode", "grid", "n_trees", "mtry", "min_leaf", "subsample", "honest", "m_learner"},
    "basis_rlasso": {"sources", "M_grid", "rate", "alpha_grid", "n_lambda"},
}
FIGURE_IDS = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "table1", "table2", "supp_dr")
_DGP_FIELDS = {f.name for f in fields(DgpSpec)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    dgp: dict
    estimators: list
    reps: int = 10
    folds: int = 5
    seed: int = 0
    output_dir: str = ""
    grid: dict = field(default_factory=dict)
    emit: dict = field(default_factory=lambda: {"csv": True, "jsonl": False, "svg": True})
    figures: list = field(default_factory=list)
    paper_reps: int | None = None
    description: str = ""
    propensity: str = "known"

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------------
    def validate(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name must be a non-empty string")
        if int(self.reps) < 1:
            raise ConfigError("reps must be >= 1")
        if int(self.folds) < 2:
            raise ConfigError("folds must be >= 2")
        unknown = set(self.dgp) - _DGP_FIELDS
        if unknown:
            raise ConfigError(f"unknown dgp fields: {sorted(unknown)}")
        for key, values in self.grid.items():
            if key not in _DGP_FIELDS:
                raise ConfigError(f"grid key {key!r} is not a dgp field")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid entry {key!r} must be a non-empty list")
        for spec in self.settings():
            try:
                DgpSpec(**spec, seed=0)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid dgp setting {spec}: {exc}") from exc
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        names = set()
        for est in self.estimators:
            kind = est.get("kind")
            if kind not in ESTIMATOR_PARAMS:
                raise ConfigError(f"unknown estimator kind {kind!r}; known: {sorted(ESTIMATOR_PARAMS)}")
            name = est.get("name")
            if not name:
                raise ConfigError("every estimator needs a name")
            if name in names:
                raise ConfigError(f"duplicate estimator name {name!r}")
            names.add(name)
            extra = set(est) - COMMON_PARAMS - ESTIMATOR_PARAMS[kind]
            if extra:
                raise ConfigError(f"estimator {name!r}: unknown parameters {sorted(extra)}")
        if self.propensity not in ("known", "estimated"):
            raise ConfigError("propensity must be 'known' or 'estimated'")
        bad = set(self.figures) - set(FIGURE_IDS)
        if bad:
            raise ConfigError(f"unknown figure ids {sorted(bad)}")
        bad = set(self.emit) - {"csv", "jsonl", "svg"}
        if bad:
            raise ConfigError(f"unknown emit flags {sorted(bad)}")

    # -- settings -------------------------------------------------------------------
    def settings(self) -> list[dict]:
        """DGP parameter dicts, one per point of the grid (grid keys vary fastest last)."""
        if not self.grid:
            return [dict(self.dgp)]
        keys = list(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            d = dict(self.dgp)
            d.update(dict(zip(keys, combo)))
            out.append(d)
        return out

    def setting_labels(self) -> list[str]:
        keys = list(self.grid)
        if not keys:
            return ["base"]
        return [";".join(f"{k}={s[k]}" for k in keys) for s in self.settings()]

    # -- (de)serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "description": self.description,
            "paper_reps": self.paper_reps,
            "reps": int(self.reps),
            "folds": int(self.folds),
            "propensity": self.propensity,
            "seed": int(self.seed),
            "output_dir": self.output_dir,
            "dgp": copy.deepcopy(self.dgp),
            "grid": copy.deepcopy(self.grid),
            "estimators": copy.deepcopy(self.estimators),
            "emit": dict(self.emit),
            "figures": list(self.figures),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        for key in ("name", "dgp", "estimators"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        d = copy.deepcopy(d)
        emit = {"csv": True, "jsonl": False, "svg": True}
        emit.update(d.pop("emit", None) or {})
        return cls(emit=emit, **{k: v for k, v in d.items() if v is not None or k == "paper_reps"})

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        cfg = cls.loads(Path(path).read_text())
        if not cfg.output_dir:
            cfg.output_dir = str(Path("results") / cfg.name)
        return cfg

    def dump(self, path):
        Path(path).write_text(self.dumps())

    def with_overrides(self, reps=None, seed=None, output_dir=None) -> "ExperimentConfig":
        d = self.to_dict()
        if reps is not None:
            d["reps"] = int(reps)
        if seed is not None:
            d["seed"] = int(seed)
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(d)
