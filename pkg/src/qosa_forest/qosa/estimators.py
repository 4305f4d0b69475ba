"""Estimators of the O term and assembly of the index ``S = 1 - O / P``.

Quantile plugging (``R1``, ``R2``): predict the conditional quantile at
each evaluation input and average the pinball loss of the evaluation
responses.  Minimum based (``Q1``, ``Q2``, ``Q3``): minimize a weighted
empirical contrast directly, either at evaluation inputs under forest
weights (``Q1``), inside every leaf (``Q2``), or under weights averaged over
the other inputs of a forest grown on all of them (``Q3``).

For a weighted contrast ``theta -> sum_j w_j psi(Y^j, theta)`` the minimum
over candidate responses is attained at the weighted inf-quantile, which
is where an upward scan over candidates would stop.  The kernels evaluate
the contrast at that point.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from ..cond_dist import CondQuantileMethod, check_alphas, cond_quantiles
from ..errors import ConfigurationError, DegenerateOutputError, EstimationError
from ..forest import Forest, check_scheme
from ..forest import _leaves
from .contrast import pinball

__all__ = [
    "ESTIMATOR_TAGS",
    "EstimatorId",
    "QosaEstimate",
    "assemble_index",
    "estimate_O_quantile",
    "estimate_O_min_weighted",
    "estimate_O_min_in_leaf",
    "estimate_O_min_full",
    "estimate_O_min_full_reference",
]

ESTIMATOR_TAGS = ("R1b", "R1o", "R2b", "R2o", "Q1b", "Q1o", "Q2b", "Q2o", "Q3b", "Q3o")


@dataclass(frozen=True)
class EstimatorId:
    """One of the ten O-term estimators plus the P-term variant."""

    tag: str
    p_variant: str = "P1"

    def __post_init__(self):
        tag = self.tag[:1].upper() + self.tag[1:].lower() if self.tag else self.tag
        if tag not in ESTIMATOR_TAGS:
            raise ConfigurationError(
                f"unknown estimator {self.tag!r}; expected one of {ESTIMATOR_TAGS}"
            )
        if self.p_variant not in ("P1", "P2"):
            raise ConfigurationError(f"p_variant must be P1 or P2, got {self.p_variant!r}")
        object.__setattr__(self, "tag", tag)

    @property
    def family(self) -> str:
        return self.tag[:2]

    @property
    def scheme(self) -> str:
        return "bootstrap" if self.tag[2] == "b" else "original"

    @property
    def plugs_quantile(self) -> bool:
        return self.tag[0] == "R"

    @property
    def needs_eval_sample(self) -> bool:
        """``R`` needs evaluation pairs, ``Q1``/``Q3`` evaluation inputs only."""
        return self.family != "Q2"

    @property
    def quantile_method(self) -> CondQuantileMethod:
        if not self.plugs_quantile:
            raise ConfigurationError(f"{self.tag} does not plug a conditional quantile")
        return CondQuantileMethod.from_tag(self.tag)

    def __str__(self):
        return self.tag


@dataclass(frozen=True)
class QosaEstimate:
    """Estimated first-order index of input ``input_index`` at level ``alpha``."""

    input_index: int
    alpha: float
    p_hat: float
    o_hat: float
    s_hat: float
    estimator: str
    leaf_size_used: int
    seed: int
    input_name: str = ""
    p_variant: str = "P1"

    def to_dict(self) -> dict:
        return asdict(self)


def assemble_index(p_hat: float, o_hat: float) -> float:
    """``1 - o_hat / p_hat``, unclamped."""
    if not p_hat > 0.0:
        raise DegenerateOutputError(
            f"P term is {p_hat!r}; the output sample is constant so the index is undefined"
        )
    return 1.0 - o_hat / p_hat


def _shape(alpha, values):
    values = np.asarray(values, dtype=np.float64)
    return float(values[0]) if np.ndim(alpha) == 0 else values


def _eval_x(forest, eval_x):
    X = np.asarray(eval_x, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if forest.d == 1 else X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != forest.d:
        raise ConfigurationError(
            f"evaluation inputs have shape {X.shape}; the forest expects {forest.d} columns"
        )
    return X


def _mean_finite(values, what):
    """Column means over rows that have an estimate; warns when rows are dropped."""
    ok = ~np.isnan(values[:, 0])
    if not ok.any():
        raise EstimationError(f"no evaluation point has a nonempty {what}")
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} evaluation points skipped (empty {what})", stacklevel=3)
    return values[ok].mean(axis=0)


def estimate_O_quantile(forest: Forest, eval_x, eval_y, alpha, method: CondQuantileMethod):
    """Mean pinball loss of ``eval_y`` at the predicted conditional quantiles.

    ``alpha`` may be a scalar or a sequence; the result has the same form.
    """
    alphas = check_alphas(alpha)
    X = _eval_x(forest, eval_x)
    y = np.asarray(eval_y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ConfigurationError("evaluation inputs and responses differ in length")
    qv = cond_quantiles(forest, X, alphas, method)
    out = [np.mean(pinball(y, qv[:, a], alphas[a])) for a in range(alphas.size)]
    return _shape(alpha, out)


def estimate_O_min_weighted(forest: Forest, eval_x, alpha, scheme: str = "original"):
    """Mean over evaluation inputs of the minimal forest-weighted contrast."""
    alphas = check_alphas(alpha)
    check_scheme(scheme)
    X = _eval_x(forest, eval_x)
    idx = forest.index(scheme)
    _, cv, _ = idx.mixture(forest.apply(X), alphas, visit=np.argsort(X[:, 0], kind="stable"))
    return _shape(alpha, _mean_finite(cv, "weight support"))


def estimate_O_min_in_leaf(forest: Forest, alpha, scheme: str = "original"):
    """Minimal contrast inside each leaf, averaged over leaves then over trees."""
    alphas = check_alphas(alpha)
    check_scheme(scheme)
    idx = forest.index(scheme)
    _, cv = idx.leaf_table(alphas)
    tree = np.repeat(np.arange(forest.n_trees), forest.leaves_per_tree())
    ok = idx.leaf_w > 0
    totals = np.zeros((forest.n_trees, alphas.size))
    np.add.at(totals, tree[ok], cv[ok])
    per_tree_count = np.bincount(tree[ok], minlength=forest.n_trees)
    used = per_tree_count > 0
    if not used.any():
        raise EstimationError("every leaf of every tree is empty")
    per_tree = totals[used] / per_tree_count[used, None]
    return _shape(alpha, per_tree.mean(axis=0))


def _check_full(full_forest, i, shadow):
    if not 0 <= i < full_forest.d:
        raise ConfigurationError(f"input index {i} out of range for d={full_forest.d}")
    S = np.asarray(shadow, dtype=np.float64)
    if S.ndim == 1 and full_forest.d == 1:
        S = S.reshape(-1, 1)
    if S.ndim != 2 or S.shape[1] != full_forest.d:
        raise ConfigurationError(
            f"shadow sample has shape {S.shape}; the forest expects {full_forest.d} columns"
        )
    return np.ascontiguousarray(S)


def estimate_O_min_full(full_forest: Forest, i: int, shadow, alpha, scheme: str = "original"):
    """Minimal contrast under weights averaged over the other inputs.

    ``shadow`` is an independent sample of all inputs.  Its column ``i``
    provides the evaluation points and its other columns the sample over
    which the forest weights are averaged.  Inputs are assumed independent.
    """
    alphas = check_alphas(alpha)
    check_scheme(scheme)
    S = _check_full(full_forest, i, shadow)
    f = full_forest
    idx = f.index(scheme)
    cnt = _leaves.shadow_counts(
        S, i, f.feature, f.threshold, f.left, f.right, f.leaf, f.node_offset,
        f.leaf_offset, f.n_leaves,
    )
    order = np.argsort(alphas, kind="stable")
    _, cv = _leaves.averaged_mixture(
        np.ascontiguousarray(S[:, i]), i, S.shape[0], cnt, f.feature, f.threshold,
        f.left, f.right, f.leaf, f.node_offset, f.leaf_offset, idx.ptr, idx.mem_rank,
        idx.mem_w, idx.leaf_w, idx.y_rel, idx.y_sorted, np.ascontiguousarray(alphas[order]),
    )
    cv = cv[:, np.argsort(order)]
    return _shape(alpha, _mean_finite(cv, "weight support"))


def estimate_O_min_full_reference(full_forest: Forest, i: int, shadow, alpha,
                                  scheme: str = "original"):
    """Direct form of :func:`estimate_O_min_full` (slow, for checking).

    Builds the averaged weights at each evaluation point by completing every
    shadow row with that point and scans all candidate responses.
    """
    alphas = check_alphas(alpha)
    S = _check_full(full_forest, i, shadow)
    others = np.delete(S, i, axis=1)
    y = full_forest.y
    out = np.zeros(alphas.size)
    for m in range(S.shape[0]):
        w = full_forest.averaged_weights(i, S[m, i], others, scheme).weights
        cand = np.unique(y[w > 0])
        for a, al in enumerate(alphas):
            risk = [np.dot(w, pinball(y, th, al)) for th in cand]
            out[a] += min(risk)
    return _shape(alpha, out / S.shape[0])
