"""End-to-end estimation of first-order indices for every input.

Quantile-plugging estimators (``R*``) need a training sample and an
independent evaluation sample of inputs and outputs; ``Q1`` and ``Q3`` need
evaluation inputs only and ``Q2`` needs none.  The P term comes from the
evaluation outputs for ``R*`` and from the training outputs otherwise.

For ``R*``, ``Q1`` and ``Q2`` a single-input forest is grown per input with
a leaf size tuned per level (forests are shared between levels that select
the same size).  ``Q3`` grows one forest on all inputs with a fixed small
leaf size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .._rng import child_seed
from ..cond_dist import CondQuantileMethod, check_alphas
from ..dataset import Dataset
from ..errors import ConfigurationError
from ..forest import ForestParams, build_forest
from ..tuning import (
    LeafGrid,
    TuningReport,
    cv_tune,
    forest_seed,
    oob_error,
    oob_tune,
)
from .contrast import estimate_P1, estimate_P2
from .estimators import (
    EstimatorId,
    QosaEstimate,
    assemble_index,
    estimate_O_min_full,
    estimate_O_min_in_leaf,
    estimate_O_min_weighted,
    estimate_O_quantile,
)

__all__ = ["QosaResult", "estimate_qosa", "estimate_qosa_multi", "TUNING_STRATEGIES"]

TUNING_STRATEGIES = ("cv", "oob", "none")


@dataclass
class QosaResult:
    estimates: list = field(default_factory=list)
    tuning: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimates": [e.to_dict() for e in self.estimates],
            "tuning": [
                dict(t.to_dict(), input_index=i) for i, t in self.tuning
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "QosaResult":
        estimates = [QosaEstimate(**e) for e in d.get("estimates", [])]
        tuning = []
        for t in d.get("tuning", []):
            t = dict(t)
            i = t.pop("input_index")
            tuning.append((i, TuningReport.from_dict(t)))
        return cls(estimates, tuning)

    def get(self, input_index: int, alpha: float) -> QosaEstimate:
        for e in self.estimates:
            if e.input_index == input_index and abs(e.alpha - alpha) < 1e-12:
                return e
        raise KeyError((input_index, alpha))


def _p_term(y, alphas, variant):
    fn = estimate_P1 if variant == "P1" else estimate_P2
    return np.array([fn(y, a) for a in alphas])


def _as_id(estimator, p_variant=None) -> EstimatorId:
    if isinstance(estimator, EstimatorId):
        return estimator if p_variant is None else replace(estimator, p_variant=p_variant)
    return EstimatorId(str(estimator), p_variant or "P1")


def estimate_qosa(
    train: Dataset,
    alpha,
    estimator="Q2o",
    *,
    eval_data: Dataset | None = None,
    n_trees: int = 100,
    tuning: str = "cv",
    grid: LeafGrid | None = None,
    folds: int = 3,
    leaf_size: int | None = None,
    full_leaf_size: int = 2,
    seed: int = 0,
    inputs=None,
    refit_oob: bool = False,
) -> QosaResult:
    """Estimate ``S_i^alpha`` for the requested inputs and levels.

    Parameters
    ----------
    train : Dataset
        Sample the forests are grown on.
    alpha : float or sequence of float
        Levels in (0, 1).
    estimator : str or EstimatorId
        One of ``R1b R1o R2b R2o Q1b Q1o Q2b Q2o Q3b Q3o``.
    eval_data : Dataset, optional
        Independent sample with the same columns, required by every
        estimator except ``Q2``.
    tuning : {"cv", "oob", "none"}
        Leaf-size selection for ``R*``, ``Q1`` and ``Q2``.  ``Q1`` and ``Q2``
        are tuned with the original-weights quantile estimator.  Ignored when
        ``leaf_size`` is given and for ``Q3``.
    full_leaf_size : int
        Leaf size of the all-input forest used by ``Q3``.
    refit_oob : bool
        After cross-validation, also report the out-of-bag error of the
        forest refitted with the selected leaf size.
    """
    return estimate_qosa_multi(
        train, alpha, [estimator], eval_data=eval_data, n_trees=n_trees, tuning=tuning,
        grid=grid, folds=folds, leaf_size=leaf_size, full_leaf_size=full_leaf_size,
        seed=seed, inputs=inputs, refit_oob=refit_oob,
    )[0]


def estimate_qosa_multi(
    train: Dataset,
    alpha,
    estimators,
    *,
    eval_data: Dataset | None = None,
    n_trees: int = 100,
    tuning: str = "cv",
    grid: LeafGrid | None = None,
    folds: int = 3,
    leaf_size: int | None = None,
    full_leaf_size: int = 2,
    seed: int = 0,
    inputs=None,
    refit_oob: bool = False,
) -> list[QosaResult]:
    """Run several estimators on the same data, one result per estimator.

    Each result equals the one :func:`estimate_qosa` returns for that
    estimator alone.  Tuning passes and forests are shared: forests depend
    only on the input, the leaf size and the seed, and estimators tuned
    with the same quantile method select the same leaf sizes.
    """
    ests = [_as_id(e) for e in estimators]
    if not ests:
        raise ConfigurationError("at least one estimator is required")
    alphas = check_alphas(alpha)
    if tuning not in TUNING_STRATEGIES:
        raise ConfigurationError(f"tuning must be one of {TUNING_STRATEGIES}, got {tuning!r}")
    per_input = [e for e in ests if e.family != "Q3"]
    if tuning == "none" and leaf_size is None and per_input:
        raise ConfigurationError("tuning 'none' requires a fixed leaf size")
    if any(e.needs_eval_sample for e in ests):
        if eval_data is None:
            tags = [e.tag for e in ests if e.needs_eval_sample]
            raise ConfigurationError(f"{', '.join(tags)} need an independent evaluation sample")
        if eval_data.d != train.d:
            raise ConfigurationError(
                f"evaluation sample has {eval_data.d} inputs, training sample {train.d}"
            )
    grid = grid or LeafGrid.default()
    inputs = list(range(train.d)) if inputs is None else [int(i) for i in inputs]
    for i in inputs:
        if not 0 <= i < train.d:
            raise ConfigurationError(f"input index {i} out of range for d={train.d}")

    results = [QosaResult() for _ in ests]
    p_hats = [
        _p_term(eval_data.output if e.plugs_quantile else train.output, alphas, e.p_variant)
        for e in ests
    ]

    def record(k, i, a, o_hat, leaf):
        e, p_hat = ests[k], p_hats[k]
        results[k].estimates.append(
            QosaEstimate(
                input_index=i,
                alpha=float(alphas[a]),
                p_hat=float(p_hat[a]),
                o_hat=float(o_hat),
                s_hat=assemble_index(p_hat[a], o_hat),
                estimator=e.tag,
                leaf_size_used=int(leaf),
                seed=int(seed),
                input_name=train.input_names[i],
                p_variant=e.p_variant,
            )
        )

    if len(per_input) < len(ests):
        params = ForestParams(
            n_trees=n_trees,
            min_samples_leaf=full_leaf_size,
            seed=child_seed(seed, "full-forest"),
        )
        full = build_forest(train, params)
        for k, e in enumerate(ests):
            if e.family != "Q3":
                continue
            for i in inputs:
                o = estimate_O_min_full(full, i, eval_data.inputs, alphas, e.scheme)
                for a in range(alphas.size):
                    record(k, i, a, o[a], full_leaf_size)
        del full

    def tuning_method(e):
        return e.quantile_method if e.plugs_quantile else CondQuantileMethod("weighted_cdf", "original")

    methods = {}
    for e in per_input:
        m = tuning_method(e)
        methods.setdefault(m.tag, m)

    for i in inputs:
        if not per_input:
            break
        data_i = train.view(i)
        base = child_seed(seed, "input", i)
        params = ForestParams(n_trees=n_trees, seed=base)
        forests = {}
        reports = {}
        if leaf_size is None:
            if tuning == "cv":
                reports = cv_tune(data_i, grid, folds, alphas, list(methods.values()), params)
            else:
                reports = oob_tune(data_i, grid, alphas, list(methods.values()), params)
                for rs in reports.values():
                    for r in rs:
                        forests.setdefault(r.selected, r.forest)
                reports = {t: [replace(r, forest=None) for r in rs] for t, rs in reports.items()}

        def forest_for(leaf):
            if leaf not in forests:
                forests[leaf] = build_forest(
                    data_i, replace(params, min_samples_leaf=leaf, seed=forest_seed(base, leaf))
                )
            return forests[leaf]

        if refit_oob and tuning == "cv" and leaf_size is None:
            for tag, rs in reports.items():
                for a, r in enumerate(rs):
                    err, _ = oob_error(forest_for(r.selected), alphas[a], methods[tag])
                    rs[a] = replace(r, refit_oob_error=float(err[0]))

        for k, e in enumerate(ests):
            if e.family == "Q3":
                continue
            tag = tuning_method(e).tag
            if leaf_size is not None:
                leaves = [int(leaf_size)] * alphas.size
            else:
                leaves = [r.selected for r in reports[tag]]
            by_leaf = {}
            for a, leaf in enumerate(leaves):
                by_leaf.setdefault(leaf, []).append(a)
            for leaf, idx in by_leaf.items():
                forest = forest_for(leaf)
                sub = alphas[idx]
                if e.plugs_quantile:
                    ev = eval_data.view(i)
                    o = estimate_O_quantile(forest, ev.inputs, ev.output, sub, e.quantile_method)
                elif e.family == "Q1":
                    o = estimate_O_min_weighted(forest, eval_data.inputs[:, [i]], sub, e.scheme)
                else:
                    o = estimate_O_min_in_leaf(forest, sub, e.scheme)
                for a, value in zip(idx, o):
                    record(k, i, a, value, leaf)
            if leaf_size is None:
                results[k].tuning.extend((i, r) for r in reports[tag])
    for r in results:
        r.estimates.sort(key=lambda e: (e.alpha, e.input_index))
    return results


def tuning_reports(result: QosaResult) -> list[TuningReport]:
    return [t for _, t in result.tuning]
