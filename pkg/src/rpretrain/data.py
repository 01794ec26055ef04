"""Data containers, fold assignment and seeded random streams.

Every estimator in the package consumes a :class:`Dataset` and a
:class:`FoldAssignment`; every source of randomness is a :class:`SeededRng`
so that replications are reproducible regardless of scheduling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SeededRng:
    """Value-type handle on a reproducible random stream.

    Two handles with the same ``(master_seed, stream_id)`` produce identical
    draws. Child streams are derived with :meth:`child`, never by sharing a
    mutable generator between tasks.
    """

    master_seed: int
    stream_id: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "SeededRng":
        return SeededRng(self.master_seed, self.stream_id + tuple(int(i) for i in ids))

    def integer_seed(self) -> int:
        """A 32-bit integer seed for kernels that take a plain integer."""
        ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=self.stream_id)
        return int(ss.generate_state(1, dtype=np.uint32)[0])


def as_rng(rng: SeededRng | int | None) -> SeededRng:
    if rng is None:
        return SeededRng(0)
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(int(rng))


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatment indicator and covariates for ``n`` units.

    ``known_propensity`` holds randomization probabilities when they are known;
    ``true_tau`` is the simulation oracle and is never used for fitting.
    """

    y: np.ndarray
    w: np.ndarray
    x: np.ndarray
    known_propensity: np.ndarray | None = None
    true_tau: np.ndarray | None = None
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        if w.shape[0] != n or x.shape[0] != n:
            raise ValueError(f"column lengths disagree: y={n}, w={w.shape[0]}, x={x.shape[0]}")
        if not np.all((w == 0) | (w == 1)):
            raise ValueError("treatment indicator must be 0/1")
        if w.sum() == 0 or w.sum() == n:
            raise ValueError("both treatment arms must be non-empty")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        if self.known_propensity is not None:
            e = np.asarray(self.known_propensity, dtype=float).ravel()
            if e.shape[0] != n:
                raise ValueError("known_propensity has the wrong length")
            if np.any(e <= 0) or np.any(e >= 1):
                raise ValueError("known propensities must lie strictly inside (0, 1)")
            object.__setattr__(self, "known_propensity", e)
        if self.true_tau is not None:
            t = np.asarray(self.true_tau, dtype=float).ravel()
            if t.shape[0] != n:
                raise ValueError("true_tau has the wrong length")
            object.__setattr__(self, "true_tau", t)
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("feature_names length must equal the number of columns")
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            y=self.y[rows],
            w=self.w[rows],
            x=self.x[rows],
            known_propensity=None if self.known_propensity is None else self.known_propensity[rows],
            true_tau=None if self.true_tau is None else self.true_tau[rows],
        )

    def with_x(self, x: np.ndarray, feature_names: Sequence[str] | None = None) -> "Dataset":
        return replace(self, x=x, feature_names=tuple(feature_names) if feature_names else ())

    # CSV layout: y, w, [e], [tau_true], features...
    def to_csv(self, path: str | Path) -> None:
        header = ["y", "w"]
        cols = [self.y, self.w]
        if self.known_propensity is not None:
            header.append("e")
            cols.append(self.known_propensity)
        if self.true_tau is not None:
            header.append("tau_true")
            cols.append(self.true_tau)
        header.extend(self.feature_names)
        table = np.column_stack(cols + [self.x])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in table:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        table = np.asarray(rows, dtype=float)
        col = {name: i for i, name in enumerate(header)}
        for required in ("y", "w"):
            if required not in col:
                raise ValueError(f"CSV is missing required column {required!r}")
        special = {"y", "w", "e", "tau_true"}
        feats = [name for name in header if name not in special]
        return cls(
            y=table[:, col["y"]],
            w=table[:, col["w"]],
            x=table[:, [col[f] for f in feats]] if feats else np.zeros((len(table), 0)),
            known_propensity=table[:, col["e"]] if "e" in col else None,
            true_tau=table[:, col["tau_true"]] if "tau_true" in col else None,
            feature_names=tuple(feats),
        )


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def __post_init__(self):
        fold_of = np.asarray(self.fold_of, dtype=int)
        object.__setattr__(self, "fold_of", fold_of)
        if np.any(fold_of < 0) or np.any(fold_of >= self.k):
            raise ValueError("fold labels must lie in [0, k)")
        if np.unique(fold_of).size != self.k:
            raise ValueError("every fold must be non-empty")

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def splits(self):
        for k in range(self.k):
            yield k, self.train_rows(k), self.test_rows(k)

    def restrict(self, rows) -> "FoldAssignment":
        """Fold labels for a row subset (labels renumbered densely)."""
        sub = self.fold_of[np.asarray(rows)]
        labels, dense = np.unique(sub, return_inverse=True)
        return FoldAssignment(dense, labels.size)


def make_folds(n: int, k: int, w, rng: SeededRng | int | None = None) -> FoldAssignment:
    """Assign rows to ``k`` folds, stratified by treatment arm.

    Within each arm the fold sizes differ by at most one, and every fold
    receives at least one treated and one control unit.
    """
    w = np.asarray(w).ravel()
    if w.shape[0] != n:
        raise ValueError("w must have length n")
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    treated = np.flatnonzero(w == 1)
    control = np.flatnonzero(w == 0)
    if treated.size == 0 or control.size == 0:
        raise ValueError("fold assignment needs both treatment arms")
    if treated.size < k or control.size < k:
        raise ValueError(f"each arm needs at least k={k} units for stratified folds")
    gen = as_rng(rng).generator()
    fold_of = np.empty(n, dtype=int)
    for arm in (control, treated):
        perm = gen.permutation(arm)
        # rotate the starting fold so the "extra" units do not pile up in fold 0
        offset = int(gen.integers(k))
        fold_of[perm] = (np.arange(arm.size) + offset) % k
    return FoldAssignment(fold_of, k)


def standardize_columns(x, weights=None):
    """Center and scale columns to mean 0 and (population) unit variance.

    Returns ``(z, means, scales, constant)``. Constant columns get scale 1 and
    are flagged in ``constant`` rather than rejected. With ``weights`` the
    moments are weighted.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        raise ValueError("need at least two rows to standardize")
    if weights is None:
        means = x.mean(axis=0)
        var = ((x - means) ** 2).mean(axis=0)
    else:
        v = np.asarray(weights, dtype=float)
        v = v / v.sum()
        means = v @ x
        var = v @ (x - means) ** 2
    scales = np.sqrt(var)
    constant = scales <= 1e-12 * np.maximum(1.0, np.abs(means))
    scales = np.where(constant, 1.0, scales)
    z = (x - means) / scales
    z[:, constant] = 0.0
    return z, means, scales, constant
