"""Leaf-size selection by K-fold cross-validation or out-of-bag error.

Both strategies score a candidate ``min_samples_leaf`` by the mean pinball
loss of held-out responses at their predicted conditional quantiles.
Forests do not depend on the level, so one pass over the grid scores every
requested level at once.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._rng import child_seed
from .cond_dist import CondQuantileMethod, check_alphas, cond_quantiles, oob_quantiles
from .dataset import Dataset, make_folds
from .errors import ConfigurationError
from .forest import ForestParams, build_forest
from .qosa.contrast import pinball

__all__ = [
    "LeafGrid",
    "TuningReport",
    "cv_tune",
    "oob_tune",
    "oob_error",
    "tune_for_minimum_estimators",
    "forest_seed",
]


def forest_seed(seed: int, leaf: int) -> int:
    """Seed of the forest grown on a full sample with leaf size ``leaf``."""
    return child_seed(seed, "forest", int(leaf))


@dataclass(frozen=True)
class LeafGrid:
    """Strictly increasing candidate values of ``min_samples_leaf``."""

    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ConfigurationError("leaf grid is empty")
        if vals[0] < 1:
            raise ConfigurationError(f"leaf sizes must be >= 1, got {vals[0]}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError(f"leaf grid must be strictly increasing: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def linspace(cls, lo: int, hi: int, count: int) -> "LeafGrid":
        """``count`` evenly spaced values from ``lo`` to ``hi``, truncated to integers."""
        if count < 1 or lo < 1 or hi < lo:
            raise ConfigurationError(f"bad grid bounds {lo}:{hi}:{count}")
        return cls(tuple(np.unique(np.linspace(lo, hi, count).astype(int))))

    @classmethod
    def default(cls) -> "LeafGrid":
        return cls.linspace(5, 300, 20)

    @classmethod
    def parse(cls, spec: str) -> "LeafGrid":
        """``lo:hi:count`` or a comma-separated list of values."""
        try:
            if ":" in spec:
                lo, hi, count = (int(p) for p in spec.split(":"))
                return cls.linspace(lo, hi, count)
            return cls(tuple(int(p) for p in spec.split(",") if p.strip()))
        except ValueError:
            raise ConfigurationError(f"cannot parse leaf grid {spec!r}") from None

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class TuningReport:
    """Scores of every grid candidate and the selected leaf size.

    ``errors[c]`` is NaN for a skipped candidate.  Ties go to the smaller
    leaf size.
    """

    strategy: str
    alpha: float
    method: str
    grid: tuple
    errors: tuple
    selected: int
    n_trees: int
    seed: int
    folds: int | None = None
    fold_errors: tuple | None = None
    skipped_observations: tuple | None = None
    refit_oob_error: float | None = None
    wall_time: float = 0.0
    forest: object = field(default=None, repr=False, compare=False)

    @property
    def selected_error(self) -> float:
        return self.errors[self.grid.index(self.selected)]

    def to_dict(self) -> dict:
        d = asdict(replace(self, forest=None))
        d.pop("forest")
        d["errors"] = [None if math.isnan(e) else e for e in self.errors]
        if self.fold_errors is not None:
            d["fold_errors"] = [[None if math.isnan(e) else e for e in row] for row in self.fold_errors]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TuningReport":
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        d["errors"] = tuple(math.nan if e is None else e for e in d["errors"])
        if d.get("fold_errors") is not None:
            d["fold_errors"] = tuple(
                tuple(math.nan if e is None else e for e in row) for row in d["fold_errors"]
            )
        if d.get("skipped_observations") is not None:
            d["skipped_observations"] = tuple(d["skipped_observations"])
        return cls(**d)


def _select(grid, errors):
    errors = np.asarray(errors)
    if np.all(np.isnan(errors)):
        return None
    return grid[int(np.nanargmin(errors))]


def _xy(data):
    if isinstance(data, Dataset):
        return data.inputs, data.output
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    return (X.reshape(-1, 1) if X.ndim == 1 else X), np.asarray(y, dtype=np.float64)


def _methods(method):
    if isinstance(method, CondQuantileMethod):
        return [method], True
    methods = list(method)
    if not methods or not all(isinstance(m, CondQuantileMethod) for m in methods):
        raise ConfigurationError("method must be a CondQuantileMethod or a sequence of them")
    return methods, False


def _losses(y, qv, alphas):
    return np.array([np.mean(pinball(y, qv[:, a], alphas[a])) for a in range(alphas.size)])


def cv_tune(data, grid: LeafGrid, K: int, alpha, method, params: ForestParams):
    """K-fold cross-validated leaf size.

    For each candidate a forest is grown on every fold complement and
    scored on the held-out fold; the candidate error is the mean of the K
    fold errors.  Candidates not smaller than the smallest training part
    are skipped with a warning.  Returns one report, or a list of reports
    when ``alpha`` is a sequence.  When ``method`` is a sequence the same
    forests score every method and the result is a dict keyed by method tag.
    """
    t0 = time.perf_counter()
    alphas = check_alphas(alpha)
    methods, single = _methods(method)
    X, y = _xy(data)
    n = X.shape[0]
    plan = make_folds(n, K, child_seed(params.seed, "cv-folds"))
    train_min = n - int(plan.sizes().max())
    G = len(grid)
    fold_err = np.full((len(methods), K, G, alphas.size), np.nan)
    skipped = [v for v in grid if v >= train_min]
    if skipped:
        warnings.warn(
            f"leaf sizes {skipped} are not smaller than the training part ({train_min}); skipped",
            stacklevel=2,
        )
    if len(skipped) == G:
        raise ConfigurationError("every leaf-size candidate was skipped")
    for fold in range(1, K + 1):
        tr = plan.train_indices(fold)
        te = plan.test_indices(fold)
        for c, leaf in enumerate(grid):
            if leaf >= train_min:
                continue
            p = replace(params, min_samples_leaf=leaf, seed=child_seed(params.seed, "cv", leaf, fold))
            forest = build_forest((X[tr], y[tr]), p)
            for m, meth in enumerate(methods):
                qv = cond_quantiles(forest, X[te], alphas, meth)
                fold_err[m, fold - 1, c] = _losses(y[te], qv, alphas)
    elapsed = time.perf_counter() - t0
    out = {}
    for m, meth in enumerate(methods):
        mean_err = fold_err[m].mean(axis=0)
        out[meth.tag] = [
            TuningReport(
                strategy="cv",
                alpha=float(alphas[a]),
                method=meth.tag,
                grid=grid.values,
                errors=tuple(float(e) for e in mean_err[:, a]),
                selected=_select(grid.values, mean_err[:, a]),
                n_trees=params.n_trees,
                seed=params.seed,
                folds=K,
                fold_errors=tuple(tuple(float(e) for e in fold_err[m, f, :, a]) for f in range(K)),
                wall_time=elapsed,
            )
            for a in range(alphas.size)
        ]
    if not single:
        return out
    reports = out[methods[0].tag]
    return reports[0] if np.ndim(alpha) == 0 else reports


def oob_error(forest, alpha, method: CondQuantileMethod):
    """Mean out-of-bag pinball loss per level and the number of skipped rows."""
    alphas = check_alphas(alpha)
    qv, used = oob_quantiles(forest, alphas, method)
    ok = used > 0
    if not ok.any():
        return np.full(alphas.size, np.nan), int(forest.n)
    return _losses(forest.y[ok], qv[ok], alphas), int((~ok).sum())


def oob_tune(data, grid: LeafGrid, alpha, method, params: ForestParams,
             keep_forest: bool = True):
    """Leaf size with the smallest out-of-bag quantile error.

    One forest is grown per candidate, seeded with :func:`forest_seed`, so
    the forest of the selected candidate is also the final forest; it is
    attached to the report when ``keep_forest`` is set.  A sequence of
    methods is handled as in :func:`cv_tune`.
    """
    t0 = time.perf_counter()
    alphas = check_alphas(alpha)
    methods, single = _methods(method)
    X, y = _xy(data)
    G = len(grid)
    err = np.full((len(methods), G, alphas.size), np.nan)
    skipped = np.zeros((len(methods), G), dtype=np.int64)
    best = [[(math.inf, None)] * alphas.size for _ in methods]
    for c, leaf in enumerate(grid):
        p = replace(params, min_samples_leaf=leaf, seed=forest_seed(params.seed, leaf))
        forest = build_forest((X, y), p)
        for m, meth in enumerate(methods):
            err[m, c], skipped[m, c] = oob_error(forest, alphas, meth)
            if keep_forest:
                for a in range(alphas.size):
                    if err[m, c, a] < best[m][a][0]:
                        best[m][a] = (err[m, c, a], forest)
        del forest
    elapsed = time.perf_counter() - t0
    out = {}
    for m, meth in enumerate(methods):
        reports = []
        for a in range(alphas.size):
            sel = _select(grid.values, err[m, :, a])
            if sel is None:
                raise ConfigurationError("no leaf-size candidate has a usable out-of-bag error")
            reports.append(
                TuningReport(
                    strategy="oob",
                    alpha=float(alphas[a]),
                    method=meth.tag,
                    grid=grid.values,
                    errors=tuple(float(e) for e in err[m, :, a]),
                    selected=sel,
                    n_trees=params.n_trees,
                    seed=params.seed,
                    skipped_observations=tuple(int(s) for s in skipped[m]),
                    wall_time=elapsed,
                    forest=best[m][a][1],
                )
            )
        out[meth.tag] = reports
    if not single:
        return out
    reports = out[methods[0].tag]
    return reports[0] if np.ndim(alpha) == 0 else reports


def tune_for_minimum_estimators(data, grid: LeafGrid, K: int, alpha, params: ForestParams):
    """Cross-validated leaf size for the minimum-based estimators.

    Scores candidates with the original-weights quantile estimator; the
    selected value is then used for the ``Q1`` and ``Q2`` forests.
    """
    return cv_tune(data, grid, K, alpha, CondQuantileMethod("weighted_cdf", "original"), params)
