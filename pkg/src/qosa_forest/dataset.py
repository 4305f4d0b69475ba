"""Datasets, synthetic toy models and fold plans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import child_rng
from .errors import ConfigurationError, IngestionError

__all__ = [
    "Dataset",
    "SyntheticModel",
    "FoldPlan",
    "load_csv",
    "generate",
    "make_folds",
    "parse_model",
]


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Numeric sample ``(X, Y)`` with column names.

    ``inputs`` has shape ``(n, d)`` and ``output`` shape ``(n,)``.  Arrays are
    copied and made read-only on construction.
    """

    inputs: np.ndarray
    output: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.output, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[1] < 1:
            raise ConfigurationError("inputs must be a 2-d array with at least one column")
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError(
                f"output length {y.shape[0]} differs from input row count {X.shape[0]}"
            )
        if X.shape[0] < 2:
            raise ConfigurationError("a dataset needs at least two rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise IngestionError("dataset contains non-finite values")
        names = tuple(self.column_names)
        d = X.shape[1]
        if not names:
            names = tuple(f"X{i + 1}" for i in range(d)) + ("Y",)
        if len(names) != d + 1:
            raise ConfigurationError(f"expected {d + 1} column names, got {len(names)}")
        object.__setattr__(self, "inputs", _frozen(X))
        object.__setattr__(self, "output", _frozen(y))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def input_names(self) -> tuple:
        return self.column_names[:-1]

    @property
    def output_name(self) -> str:
        return self.column_names[-1]

    def view(self, i: int) -> "Dataset":
        """Single-input dataset ``(X_i, Y)``."""
        if not 0 <= i < self.d:
            raise ConfigurationError(f"input index {i} out of range for d={self.d}")
        return Dataset(
            self.inputs[:, [i]], self.output, (self.column_names[i], self.output_name)
        )

    def subset(self, rows) -> "Dataset":
        return Dataset(self.inputs[rows], self.output[rows], self.column_names)

    def split(self, seed: int, fraction: float = 0.5) -> tuple["Dataset", "Dataset"]:
        """Seeded shuffle followed by a cut into two parts."""
        perm = child_rng(seed, "split").permutation(self.n)
        cut = int(round(self.n * fraction))
        if cut < 2 or self.n - cut < 2:
            raise ConfigurationError("dataset too small to split into two samples")
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))


def load_csv(path, output_column: str) -> Dataset:
    """Read a header-first CSV file; every cell must parse as a finite real.

    Inputs are all non-output columns in header order.  Categorical columns
    must already be integer coded.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if output_column not in header:
            raise ConfigurationError(
                f"output column {output_column!r} not among {header}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            values = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {name!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestionError(
                        f"{path}: row {lineno}, column {name!r}: non-finite value {cell!r}"
                    )
                values.append(v)
            rows.append(values)
    if len(header) < 2:
        raise ConfigurationError("need at least one input column besides the output")
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    j = header.index(output_column)
    keep = [c for c in range(len(header)) if c != j]
    names = tuple(header[c] for c in keep) + (output_column,)
    return Dataset(table[:, keep], table[:, j], names)


@dataclass(frozen=True)
class SyntheticModel:
    """Toy models with independent exponential inputs.

    ``exp-diff``: ``Y = X1 - X2`` with ``X1, X2 ~ Exp(1)``.
    ``additive-exp``: ``Y = sum_i X_i`` with ``X_i ~ Exp(rates[i])``, rates
    pairwise distinct so that ``Y`` is hypoexponential.
    """

    kind: str
    rates: tuple = field(default=())

    def __post_init__(self):
        if self.kind == "exp-diff":
            rates = tuple(float(r) for r in self.rates) or (1.0, 1.0)
            if rates != (1.0, 1.0):
                raise ConfigurationError("exp-diff has exactly two unit-rate inputs")
        elif self.kind == "additive-exp":
            rates = tuple(float(r) for r in self.rates)
            if not rates:
                raise ConfigurationError("additive-exp needs at least one rate")
            if any(not (r > 0 and math.isfinite(r)) for r in rates):
                raise ConfigurationError(f"rates must be positive, got {rates}")
            if len(set(rates)) != len(rates):
                raise ConfigurationError(f"rates must be pairwise distinct, got {rates}")
        else:
            raise ConfigurationError(f"unknown synthetic model {self.kind!r}")
        object.__setattr__(self, "rates", rates)

    @classmethod
    def exp_diff(cls) -> "SyntheticModel":
        return cls("exp-diff")

    @classmethod
    def additive_exp(cls, rates: Sequence[float]) -> "SyntheticModel":
        return cls("additive-exp", tuple(rates))

    @property
    def dimension(self) -> int:
        return len(self.rates)

    @property
    def model_id(self) -> str:
        if self.kind == "exp-diff":
            return "exp-diff"
        return "additive-exp:" + ",".join(repr(r) for r in self.rates)

    def sample_inputs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # inverse CDF; 1 - U lies in (0, 1] so the log is finite
        u = 1.0 - rng.random((n, self.dimension))
        return -np.log(u) / np.asarray(self.rates)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "exp-diff":
            return X[:, 0] - X[:, 1]
        return X.sum(axis=1)


def parse_model(spec: str) -> SyntheticModel:
    """Parse ``exp-diff`` or ``additive-exp:<l1,l2,...>``."""
    spec = spec.strip()
    if spec == "exp-diff":
        return SyntheticModel.exp_diff()
    if spec.startswith("additive-exp:"):
        body = spec.split(":", 1)[1]
        try:
            rates = [float(t) for t in body.split(",") if t.strip()]
        except ValueError:
            raise ConfigurationError(f"bad rate list in {spec!r}") from None
        return SyntheticModel.additive_exp(rates)
    raise ConfigurationError(f"unknown model id {spec!r}")


def generate(model: SyntheticModel, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. rows from ``model``; deterministic given ``seed``."""
    if n < 2:
        raise ConfigurationError("n must be at least 2")
    rng = child_rng(seed, "generate", model.model_id)
    X = model.sample_inputs(rng, n)
    names = tuple(f"X{i + 1}" for i in range(model.dimension)) + ("Y",)
    return Dataset(X, model.evaluate(X), names)


@dataclass(frozen=True)
class FoldPlan:
    """Random balanced partition of ``range(n)`` into ``K`` folds labelled 1..K."""

    assignments: np.ndarray
    K: int
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K + 1)[1:]


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    if not 2 <= K <= n:
        raise ConfigurationError(f"fold count K={K} must lie in [2, n={n}]")
    perm = child_rng(seed, "folds").permutation(n)
    labels = np.empty(n, dtype=np.int64)
    labels[perm] = np.arange(n) % K + 1
    return FoldPlan(_frozen(labels, np.int64), int(K), int(seed))
