"""Pinball contrast, O-term estimators and index assembly."""

from .contrast import empirical_quantile, estimate_P1, estimate_P2, mean_pinball, pinball
from .estimators import (
    ESTIMATOR_TAGS,
    EstimatorId,
    QosaEstimate,
    assemble_index,
    estimate_O_min_full,
    estimate_O_min_full_reference,
    estimate_O_min_in_leaf,
    estimate_O_min_weighted,
    estimate_O_quantile,
)

__all__ = [
    "ESTIMATOR_TAGS",
    "EstimatorId",
    "QosaEstimate",
    "QosaResult",
    "assemble_index",
    "empirical_quantile",
    "estimate_O_min_full",
    "estimate_O_min_full_reference",
    "estimate_O_min_in_leaf",
    "estimate_O_min_weighted",
    "estimate_O_quantile",
    "estimate_P1",
    "estimate_P2",
    "estimate_qosa",
    "mean_pinball",
    "pinball",
]


def __getattr__(name):
    # the procedure depends on tuning, which itself imports this package
    if name in ("estimate_qosa", "estimate_qosa_multi", "QosaResult"):
        from . import procedure

        return getattr(procedure, name)
    raise AttributeError(name)
