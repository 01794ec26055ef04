"""Fitted CATE models and their JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

KINDS = ("rlasso", "uni_rlasso", "dr_lasso", "rboost", "forest", "basis_rlasso")


@dataclass
class LinearPredictor:
    intercept: float
    coefficients: np.ndarray
    basis: Any = None  # optional featurizer with .transform(x) and .to_dict()

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.basis is not None:
            x = self.basis.transform(x)
        return self.intercept + x @ self.coefficients

    def to_dict(self) -> dict:
        d = {"type": "linear", "intercept": float(self.intercept),
             "coefficients": [float(c) for c in self.coefficients]}
        if self.basis is not None:
            d["basis"] = self.basis.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        basis = None
        if "basis" in d:
            from .boosting import BasisExpansion

            basis = BasisExpansion.from_dict(d["basis"])
        return cls(d["intercept"], np.asarray(d["coefficients"], dtype=float), basis)


def _predictor_from_dict(d):
    kind = d["type"]
    if kind == "linear":
        return LinearPredictor.from_dict(d)
    if kind == "stumps":
        from .boosting import StumpEnsemble

        return StumpEnsemble.from_dict(d)
    if kind == "forest":
        from .forest import Forest

        return Forest.from_dict(d)
    raise ValueError(f"unknown predictor type {kind!r}")


@dataclass
class CATEModel:
    """A fitted effect function plus the hyperparameters that produced it.

    ``diagnostics`` carries tuning curves (e.g. CV R-loss per alpha) and is
    not serialized.
    """

    kind: str
    predictor: Any
    chosen_alpha: float = 1.0
    chosen_lambda2: float = math.nan
    cv_rloss: float = math.nan
    hyperparameters: dict = field(default_factory=dict)
    feature_names: tuple = ()
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown CATE model kind {self.kind!r}")

    def predict(self, x) -> np.ndarray:
        return self.predictor.predict(x)

    @property
    def coefficients(self) -> np.ndarray | None:
        return getattr(self.predictor, "coefficients", None)

    @property
    def active_set(self) -> np.ndarray:
        """Nonzero coefficients among the original features (linear kinds)."""
        coef = self.coefficients
        if coef is None:
            return np.array([], dtype=int)
        p = len(self.feature_names) if self.feature_names else coef.size
        return np.flatnonzero(coef[:p] != 0)

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "chosen_alpha": self.chosen_alpha,
            "chosen_lambda2": None if math.isnan(self.chosen_lambda2) else self.chosen_lambda2,
            "cv_rloss": None if math.isnan(self.cv_rloss) else self.cv_rloss,
            "hyperparameters": self.hyperparameters,
            "feature_names": list(self.feature_names),
            "predictor": self.predictor.to_dict(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CATEModel":
        doc = json.loads(text)
        nan = float("nan")
        return cls(
            kind=doc["kind"],
            predictor=_predictor_from_dict(doc["predictor"]),
            chosen_alpha=doc["chosen_alpha"],
            chosen_lambda2=nan if doc["chosen_lambda2"] is None else doc["chosen_lambda2"],
            cv_rloss=nan if doc["cv_rloss"] is None else doc["cv_rloss"],
            hyperparameters=doc["hyperparameters"],
            feature_names=tuple(doc["feature_names"]),
        )
