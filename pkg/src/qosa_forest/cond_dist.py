"""Conditional distribution and quantile estimates from a fitted forest.

Two families are provided.  ``weighted_cdf`` averages the leaf histograms
of the query's cells into a weighted empirical CDF and inverts it;
``in_leaf`` takes the empirical quantile inside each cell and averages the
per-tree values.  Either family can use bootstrap multiplicities or the
original sample, and either can be restricted to the trees for which a
training row is out of bag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EstimationError
from .forest import Forest, check_scheme
from .forest import _leaves

__all__ = [
    "Alpha",
    "CondQuantileMethod",
    "FAMILIES",
    "ccdf",
    "check_alphas",
    "cond_quantile_weighted",
    "cond_quantile_in_leaf",
    "cond_quantiles",
    "oob_quantile",
    "oob_quantiles",
]

FAMILIES = ("weighted_cdf", "in_leaf")


@dataclass(frozen=True)
class Alpha:
    """Quantile level in the open interval (0, 1)."""

    value: float

    def __post_init__(self):
        try:
            v = float(self.value)
        except (TypeError, ValueError):
            raise ConfigurationError(f"alpha must be a real number, got {self.value!r}") from None
        if not 0.0 < v < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {v!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def check_alphas(alphas) -> np.ndarray:
    """Validate one or several levels and return them as a 1-d float array."""
    if isinstance(alphas, Alpha):
        alphas = alphas.value
    try:
        a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    except (TypeError, ValueError):
        raise ConfigurationError(f"alpha must be real numbers, got {alphas!r}") from None
    if a.size == 0:
        raise ConfigurationError("at least one alpha is required")
    for v in a:
        Alpha(v)
    return a


@dataclass(frozen=True)
class CondQuantileMethod:
    """Conditional quantile estimator: ``family`` x ``scheme``.

    The four combinations are the quantile-plugging estimators ``R1b``
    (weighted_cdf, bootstrap), ``R1o``, ``R2b`` (in_leaf, bootstrap) and ``R2o``.
    """

    family: str = "weighted_cdf"
    scheme: str = "original"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        check_scheme(self.scheme)

    @property
    def tag(self) -> str:
        return ("R1" if self.family == "weighted_cdf" else "R2") + self.scheme[0]

    @classmethod
    def from_tag(cls, tag: str) -> "CondQuantileMethod":
        table = {
            "R1b": ("weighted_cdf", "bootstrap"),
            "R1o": ("weighted_cdf", "original"),
            "R2b": ("in_leaf", "bootstrap"),
            "R2o": ("in_leaf", "original"),
        }
        if tag not in table:
            raise ConfigurationError(f"not a quantile method tag: {tag!r}")
        return cls(*table[tag])


def ccdf(forest: Forest, x, y, scheme: str = "original"):
    """Weighted empirical CDF ``sum_j w_j(x) 1{Y^j <= y}`` at one query.

    ``y`` may be a scalar or an array of thresholds.
    """
    w = forest.weights(x, scheme).weights
    y = np.asarray(y, dtype=np.float64)
    cw = np.concatenate(([0.0], np.cumsum(w[forest.y_order])))
    cw[-1] = 1.0  # drop rounding drift in the total mass
    out = cw[np.searchsorted(forest.y_sorted, y, side="right")]
    return np.minimum(out, 1.0) if out.ndim else float(min(out, 1.0))


def cond_quantiles(forest: Forest, X, alphas, method: CondQuantileMethod) -> np.ndarray:
    """Conditional quantiles for every row of ``X``, shape ``(q, len(alphas))``."""
    alphas = check_alphas(alphas)
    X = forest._check_query(X)
    leaves = forest.apply(X)
    idx = forest.index(method.scheme)
    if method.family == "weighted_cdf":
        qv, _, used = idx.mixture(leaves, alphas, visit=np.argsort(X[:, 0], kind="stable"))
    else:
        table, _ = idx.leaf_table(alphas)
        qv = _leaves.tree_average(leaves, np.ascontiguousarray(table))
        used = (~np.isnan(qv[:, 0])).astype(np.int64)
    if np.any(used == 0):
        raise EstimationError("no tree provides a nonempty cell for some query")
    return qv


def _single(forest, x, alpha, method):
    x = np.asarray(x, dtype=np.float64)
    qv = cond_quantiles(forest, x, alpha, method)
    if qv.shape[0] == 1 and np.ndim(alpha) == 0:
        return float(qv[0, 0])
    return qv[:, 0] if np.ndim(alpha) == 0 else qv


def cond_quantile_weighted(forest: Forest, x, alpha, scheme: str = "original"):
    """``inf{Y^p : F(Y^p | x) >= alpha}`` under the forest weights."""
    return _single(forest, x, alpha, CondQuantileMethod("weighted_cdf", scheme))


def cond_quantile_in_leaf(forest: Forest, x, alpha, scheme: str = "original"):
    """Average over trees of the empirical quantile inside the cell of ``x``."""
    return _single(forest, x, alpha, CondQuantileMethod("in_leaf", scheme))


def oob_quantiles(forest: Forest, alphas, method: CondQuantileMethod):
    """Out-of-bag conditional quantiles at every training input.

    Row ``m`` uses only the trees whose bootstrap sample omits observation
    ``m``.  Under the original scheme ``m`` is also removed from its own
    cells, whose sizes shrink by one.  Returns ``(quantiles, n_trees_used)``;
    rows without any out-of-bag tree are NaN with zero trees used.
    """
    alphas = check_alphas(alphas)
    if not forest.params.bootstrap:
        raise ConfigurationError("out-of-bag estimates need a bootstrapped forest")
    leaves = forest.oob_leaves()
    idx = forest.index(method.scheme)
    excl = method.scheme == "original"
    if method.family == "weighted_cdf":
        rank = forest.y_rank if excl else None
        visit = np.argsort(forest.X[:, 0], kind="stable")
        qv, _, used = idx.mixture(leaves, alphas, rank, visit)
        return qv, used
    table, _ = idx.leaf_table(alphas)
    order = np.argsort(alphas, kind="stable")
    back = np.argsort(order)
    qv, used = _leaves.oob_in_leaf(
        leaves, np.arange(forest.n), idx.slot, excl, np.ascontiguousarray(table[:, order]),
        idx.ptr, idx.mem_rank, idx.y_sorted, np.ascontiguousarray(alphas[order]),
    )
    return qv[:, back], used


def oob_quantile(forest: Forest, m: int, alpha, method: CondQuantileMethod) -> float:
    """Out-of-bag conditional quantile at training row ``m``.

    Returns NaN, with a warning, when every tree contains ``m`` in bag.
    """
    if not 0 <= m < forest.n:
        raise ConfigurationError(f"training index {m} out of range for n={forest.n}")
    alpha = float(check_alphas(alpha)[0])
    leaves = forest.oob_leaves()[m:m + 1]
    idx = forest.index(method.scheme)
    excl = method.scheme == "original"
    if method.family == "weighted_cdf":
        rank = forest.y_rank[m:m + 1] if excl else None
        qv, _, used = idx.mixture(leaves, [alpha], rank)
    else:
        table, _ = idx.leaf_table([alpha])
        qv, used = _leaves.oob_in_leaf(
            leaves, np.array([m]), idx.slot, excl, np.ascontiguousarray(table),
            idx.ptr, idx.mem_rank, idx.y_sorted, np.array([alpha]),
        )
    if used[0] == 0:
        warnings.warn(f"observation {m} is in bag for every tree", stacklevel=2)
        return float("nan")
    return float(qv[0, 0])
