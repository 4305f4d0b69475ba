"""Pinball contrast and the unconditional P-term estimators."""

from __future__ import annotations

import math

import numpy as np

from ..cond_dist import check_alphas
from ..errors import ConfigurationError
from ..forest._leaves import ALPHA_TOL

__all__ = ["pinball", "empirical_quantile", "estimate_P1", "estimate_P2", "mean_pinball"]


def pinball(y, theta, alpha):
    """Check loss ``(y - theta) * (alpha - 1{y <= theta})``, elementwise."""
    y = np.asarray(y, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    out = (y - theta) * (alpha - (y <= theta))
    return float(out) if out.ndim == 0 else out


def _sample(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size < 2:
        raise ConfigurationError("a sample of size at least 2 is required")
    if not np.isfinite(y).all():
        raise ConfigurationError("sample contains non-finite values")
    return y


def empirical_quantile(y, alpha) -> float:
    """Inf-form empirical quantile: the order statistic ``Y_(ceil(n alpha))``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ConfigurationError("empty sample")
    alpha = float(check_alphas(alpha)[0])
    k = max(1, math.ceil(y.size * (alpha - ALPHA_TOL)))
    return float(np.partition(y, k - 1)[k - 1])


def mean_pinball(y, theta, alpha) -> float:
    """``mean_j psi_alpha(y_j, theta_j)`` with pairwise summation."""
    return float(np.mean(pinball(y, theta, alpha)))


def estimate_P1(y_sample, alpha) -> float:
    """Mean contrast of the sample at its own empirical quantile.

    Returns 0 on a constant sample; index assembly rejects that value.
    """
    y = _sample(y_sample)
    alpha = float(check_alphas(alpha)[0])
    return mean_pinball(y, empirical_quantile(y, alpha), alpha)


def estimate_P2(y_sample, alpha) -> float:
    """Minimum of the mean contrast over the sample's order statistics.

    The objective is convex, so order statistics are scanned upwards and the
    scan stops once the value increases.  The candidate at the empirical
    quantile is also evaluated directly, which keeps ``P2 <= P1`` exact in
    floating point.
    """
    y = _sample(y_sample)
    alpha = float(check_alphas(alpha)[0])
    n = y.size
    ys = np.sort(y)
    # C(theta_k) = alpha (S - n theta) - (S_k - k theta) with S_k the sum of
    # the k smallest values (ties included)
    cand, ties = np.unique(ys, return_counts=True)
    k = np.cumsum(ties)
    s = np.cumsum(ys)[k - 1]
    total = s[-1]
    c = (alpha * (total - n * cand) - (s - k * cand)) / n
    up = np.flatnonzero(np.diff(c) > 0)
    stop = up[0] if up.size else c.size - 1
    best = float(c[: stop + 1].min())
    direct = mean_pinball(y, empirical_quantile(y, alpha), alpha)
    return max(min(best, direct), 0.0)
