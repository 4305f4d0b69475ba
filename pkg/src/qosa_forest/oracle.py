"""True index values for the synthetic models.

``exp-diff`` (``Y = X1 - X2``, unit exponentials) has closed forms: ``Y``
is standard Laplace and ``Y | X1`` is ``X1`` minus a unit exponential.
``additive-exp`` has a hypoexponential output whose CDF is a mixture of
exponentials; its index only needs the law of the sum of the other inputs,
since the pinball contrast is translation invariant.  A double-loop
Monte-Carlo oracle covers any model with independent inputs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._rng import child_rng
from .cond_dist import check_alphas
from .dataset import SyntheticModel
from .errors import ConfigurationError, DegenerateOutputError
from .forest._leaves import ALPHA_TOL

__all__ = [
    "HypoexpParams",
    "expdiff_O_true",
    "expdiff_P_true",
    "expdiff_qosa_true",
    "expdiff_cond_cdf",
    "expdiff_cond_quantile",
    "hypoexp_cdf",
    "hypoexp_quantile",
    "hypoexp_truncated_mean",
    "hypoexp_qosa_true",
    "qosa_true",
    "MCResult",
    "mc_brute_force_qosa",
    "mc_brute_force",
]


def _alpha(alpha) -> float:
    return float(check_alphas(alpha)[0])


def _input(i, d=2) -> int:
    if i not in range(1, d + 1):
        raise ConfigurationError(f"input index must be in 1..{d}, got {i!r}")
    return int(i)


def expdiff_O_true(alpha, i) -> float:
    """``E[psi_alpha(Y, q^alpha(Y | X_i))]`` for ``exp-diff``, ``i`` in {1, 2}.

    Given ``X1``, ``Y = X1 - X2`` has quantile ``X1 + ln(alpha)`` and the
    conditional risk is ``-alpha ln(alpha)`` whatever ``X1``.  Input 2 follows
    from the symmetry ``Y -> -Y``, which swaps the inputs and ``alpha``.
    """
    a = _alpha(alpha)
    if _input(i) == 2:
        a = 1.0 - a
    return -a * math.log(a)


def expdiff_cond_cdf(y, x, i=1):
    """``P(Y <= y | X_i = x)`` for ``exp-diff``.

    Given ``X1 = x``, ``Y = x - X2`` so the CDF is ``exp(-(x - y))`` below
    ``x``; given ``X2 = x``, ``Y = X1 - x`` so it is ``1 - exp(-(y + x))``
    above ``-x``.  ``y`` may be an array.
    """
    y = np.asarray(y, dtype=np.float64)
    if _input(i) == 1:
        out = np.exp(-np.maximum(x - y, 0.0))
    else:
        out = 1.0 - np.exp(-np.maximum(y + x, 0.0))
    return float(out) if out.ndim == 0 else out


def expdiff_cond_quantile(alpha, x, i=1) -> float:
    """``q^alpha(Y | X_i = x)``: ``x + ln(alpha)`` for ``i=1``, ``-x - ln(1 - alpha)`` for ``i=2``."""
    a = _alpha(alpha)
    if _input(i) == 1:
        return x + math.log(a)
    return -x - math.log(1.0 - a)


def expdiff_P_true(alpha) -> float:
    """``E[psi_alpha(Y, q^alpha(Y))]`` for a standard Laplace ``Y``.

    For ``alpha <= 1/2`` the quantile is ``ln(2 alpha)`` and the risk reduces
    to ``-E[Y 1{Y <= q}] = alpha (1 - ln(2 alpha))``; the upper half follows by
    symmetry.
    """
    a = _alpha(alpha)
    a = min(a, 1.0 - a)
    return a * (1.0 - math.log(2.0 * a))


def expdiff_qosa_true(alpha, i) -> float:
    return 1.0 - expdiff_O_true(alpha, i) / expdiff_P_true(alpha)


@dataclass(frozen=True)
class HypoexpParams:
    """Law of a sum of independent exponentials with distinct rates."""

    rates: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in np.atleast_1d(self.rates))
        if not rates:
            raise ConfigurationError("at least one rate is required")
        if any(not (r > 0 and math.isfinite(r)) for r in rates):
            raise ConfigurationError(f"rates must be positive and finite, got {rates}")
        if len(set(rates)) != len(rates):
            raise ConfigurationError(f"rates must be pairwise distinct, got {rates}")
        object.__setattr__(self, "rates", rates)

    @property
    def coefficients(self) -> np.ndarray:
        """``A_i = prod_{j != i} l_j / (l_j - l_i)`` so that ``1 - F(t) = sum A_i e^{-l_i t}``."""
        lam = np.asarray(self.rates)
        out = np.ones(lam.size)
        for i in range(lam.size):
            for j in range(lam.size):
                if j != i:
                    out[i] *= lam[j] / (lam[j] - lam[i])
        return out

    @property
    def mean(self) -> float:
        return float(np.sum(1.0 / np.asarray(self.rates)))


def _params(params) -> HypoexpParams:
    return params if isinstance(params, HypoexpParams) else HypoexpParams(tuple(params))


def hypoexp_cdf(t, params):
    """CDF ``1 - sum_i A_i exp(-l_i t)``, zero for ``t < 0``.

    ``t`` may be a scalar or an array.
    """
    p = _params(params)
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(p.rates)
    tt = np.maximum(t, 0.0)[..., None]
    out = 1.0 - np.sum(p.coefficients * np.exp(-lam * tt), axis=-1)
    out = np.where(t > 0, np.clip(out, 0.0, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def hypoexp_quantile(alpha, params) -> float:
    """Root of ``F(t) = alpha`` to absolute tolerance 1e-10."""
    p = _params(params)
    a = _alpha(alpha)
    hi = 50.0 * p.mean
    while hypoexp_cdf(hi, p) < a:
        hi *= 2.0
    return float(brentq(lambda t: hypoexp_cdf(t, p) - a, 0.0, hi, xtol=1e-10, rtol=4 * np.finfo(float).eps))


def hypoexp_truncated_mean(q, params) -> float:
    """``E[T 1{T <= q}] = sum_i A_i (1 - e^{-l_i q} (1 + l_i q)) / l_i``."""
    p = _params(params)
    if q <= 0:
        return 0.0
    lam = np.asarray(p.rates)
    return float(np.sum(p.coefficients * (1.0 - np.exp(-lam * q) * (1.0 + lam * q)) / lam))


def _risk(alpha, params) -> float:
    # alpha E[T] - E[T 1{T <= q}]; F(q) = alpha since T is continuous
    q = hypoexp_quantile(alpha, params)
    return alpha * _params(params).mean - hypoexp_truncated_mean(q, params)


def hypoexp_qosa_true(alpha, i, params) -> float:
    """Index of input ``i`` (1-based) for ``Y = sum_j X_j``, ``X_j ~ Exp(l_j)``.

    Conditioning on ``X_i`` shifts ``Y`` by ``X_i``, so the conditional risk is
    the unconditional risk of the sum of the other inputs.
    """
    p = _params(params)
    a = _alpha(alpha)
    d = len(p.rates)
    i = _input(i, d)
    if d == 1:
        return 1.0
    rest = HypoexpParams(p.rates[: i - 1] + p.rates[i:])
    return 1.0 - _risk(a, rest) / _risk(a, p)


def qosa_true(model: SyntheticModel, i: int, alpha) -> float:
    """True index of input ``i`` (1-based) for a synthetic model."""
    if model.kind == "exp-diff":
        return expdiff_qosa_true(alpha, i)
    return hypoexp_qosa_true(alpha, i, model.rates)


@dataclass(frozen=True)
class MCResult:
    """Monte-Carlo index estimate with its delta-method standard error."""

    value: float
    stderr: float
    o_hat: float
    p_hat: float


def _min_risk(Y, alpha):
    """Row-wise risk at the row's inf-form empirical quantile."""
    m = Y.shape[-1]
    k = max(1, math.ceil(m * (alpha - ALPHA_TOL)))
    q = np.partition(Y, k - 1, axis=-1)[..., k - 1 : k]
    return np.mean((Y - q) * (alpha - (Y <= q)), axis=-1)


_CHUNK = 64


def mc_brute_force(model, i: int, alpha, n_outer: int = 2000, n_inner: int = 2000,
                   seed: int = 0, n_p: int | None = None, workers: int = 1) -> MCResult:
    """Double-loop Monte-Carlo index of input ``i`` (1-based).

    ``model`` needs ``dimension``, ``sample_inputs(rng, n)`` and
    ``evaluate(X)``, with independent inputs.  For each of ``n_outer`` draws
    of ``X_i`` the other inputs are drawn ``n_inner`` times and the minimal
    empirical risk of the outputs is recorded; ``O`` is the outer mean.  ``P``
    comes from a separate sample of ``n_p`` outputs (default
    ``n_outer * n_inner``, at most 10^7).  Draws are grouped in fixed chunks
    with their own child seeds, so the result does not depend on ``workers``.
    """
    a = _alpha(alpha)
    d = int(model.dimension)
    i = _input(i, d)
    if n_outer < 2 or n_inner < 2:
        raise ConfigurationError("n_outer and n_inner must be at least 2")
    n_p = min(n_outer * n_inner, 10**7) if n_p is None else int(n_p)

    def chunk(c):
        rng = child_rng(seed, "mc-outer", c)
        rows = min(_CHUNK, n_outer - c * _CHUNK)
        xi = model.sample_inputs(rng, rows)[:, i - 1]
        X = model.sample_inputs(rng, rows * n_inner)
        X[:, i - 1] = np.repeat(xi, n_inner)
        Y = np.asarray(model.evaluate(X), dtype=np.float64).reshape(rows, n_inner)
        return _min_risk(Y, a)

    n_chunks = -(-n_outer // _CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(chunk, range(n_chunks)))
    else:
        parts = [chunk(c) for c in range(n_chunks)]
    outer = np.concatenate(parts)

    rng = child_rng(seed, "mc-p")
    Y = np.asarray(model.evaluate(model.sample_inputs(rng, n_p)), dtype=np.float64)
    p_hat = float(_min_risk(Y, a))
    if not p_hat > 0:
        raise DegenerateOutputError("the model output is constant; the index is undefined")
    m = Y.size
    k = max(1, math.ceil(m * (a - ALPHA_TOL)))
    q = np.partition(Y, k - 1)[k - 1]
    se_p = float(np.std((Y - q) * (a - (Y <= q)), ddof=1) / math.sqrt(m))
    o_hat = float(outer.mean())
    se_o = float(outer.std(ddof=1) / math.sqrt(outer.size))
    se = math.hypot(se_o / p_hat, o_hat * se_p / p_hat**2)
    return MCResult(1.0 - o_hat / p_hat, se, o_hat, p_hat)


def mc_brute_force_qosa(model, i: int, alpha, n_outer: int = 2000, n_inner: int = 2000,
                        seed: int = 0) -> float:
    """Index value of :func:`mc_brute_force`."""
    return mc_brute_force(model, i, alpha, n_outer, n_inner, seed).value
