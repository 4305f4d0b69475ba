"""Replicated estimation experiments scored against the oracles.

An experiment draws ``s`` independent training and evaluation samples from
a synthetic model, estimates the indices with every requested estimator
and compares them with the true values:

    rmse = sqrt(mean_j (S_j - S)^2),  bias = mean_j S_j - S,
    variance = mean_j (S_j - mean S)^2,

so that ``rmse^2 = bias^2 + variance``.  One axis can be swept: the leaf
size, the number of trees, the sample size or the dimension of the
additive exponential model.  Replication ``r`` reuses the same data and
seeds at every sweep value that does not change the data.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._rng import child_seed
from .cond_dist import check_alphas
from .dataset import SyntheticModel, generate
from .errors import ConfigurationError
from .qosa.estimators import EstimatorId
from .qosa.procedure import TUNING_STRATEGIES, estimate_qosa_multi
from .oracle import qosa_true
from .tuning import LeafGrid

__all__ = [
    "SWEEP_AXES",
    "ExperimentConfig",
    "MetricCell",
    "MetricsReport",
    "dimension_rates",
    "run_experiment",
    "dimension_sweep",
    "weighted_rmse",
    "rmse_identity_gap",
]

SWEEP_AXES = ("leaf", "trees", "n", "dimension", "none")


def dimension_rates(d: int) -> tuple:
    """``d`` rates evenly spaced in [0.3, 1.25]."""
    return tuple(float(r) for r in np.linspace(0.3, 1.25, int(d)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one replicated experiment.

    ``sweep_values`` lists the leaf sizes, tree counts, sample sizes or
    dimensions of the ``sweep`` axis and must be empty for ``"none"``.
    ``n_eval`` defaults to ``n``.  ``inputs`` are 0-based; all by default.
    """

    model: SyntheticModel
    estimators: tuple = ("Q1o",)
    alphas: tuple = (0.5,)
    n: int = 10_000
    n_trees: int = 100
    replications: int = 20
    grid: LeafGrid = field(default_factory=LeafGrid.default)
    tuning: str = "cv"
    folds: int = 3
    seed: int = 0
    sweep: str = "none"
    sweep_values: tuple = ()
    leaf_size: int | None = None
    full_leaf_size: int = 2
    n_eval: int | None = None
    inputs: tuple | None = None
    p_variant: str = "P1"

    def __post_init__(self):
        if not isinstance(self.model, SyntheticModel):
            raise ConfigurationError("experiments need a synthetic model with a known oracle")
        ests = tuple(str(EstimatorId(str(e), self.p_variant)) for e in self.estimators)
        if not ests:
            raise ConfigurationError("at least one estimator is required")
        object.__setattr__(self, "estimators", ests)
        object.__setattr__(self, "alphas", tuple(float(a) for a in check_alphas(self.alphas)))
        if self.replications < 1:
            raise ConfigurationError(f"replications must be >= 1, got {self.replications}")
        if self.tuning not in TUNING_STRATEGIES:
            raise ConfigurationError(f"tuning must be one of {TUNING_STRATEGIES}")
        if self.sweep not in SWEEP_AXES:
            raise ConfigurationError(f"sweep must be one of {SWEEP_AXES}, got {self.sweep!r}")
        values = tuple(int(v) for v in self.sweep_values)
        if self.sweep == "none" and values:
            raise ConfigurationError("sweep 'none' takes no sweep values")
        if self.sweep != "none" and not values:
            raise ConfigurationError(f"sweep {self.sweep!r} needs at least one value")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigurationError(f"sweep values must be strictly increasing: {values}")
        if any(v < 1 for v in values):
            raise ConfigurationError("sweep values must be positive")
        if self.sweep == "dimension" and self.model.kind != "additive-exp":
            raise ConfigurationError("the dimension sweep uses the additive-exp model")
        object.__setattr__(self, "sweep_values", values)
        if self.n < 2:
            raise ConfigurationError("n must be at least 2")

    def points(self) -> tuple:
        return self.sweep_values if self.sweep != "none" else (None,)

    def at(self, value) -> "ExperimentConfig":
        """Configuration of one sweep point, with the axis fixed to ``value``."""
        if value is None:
            return self
        base = replace(self, sweep="none", sweep_values=())
        if self.sweep == "leaf":
            return replace(base, leaf_size=value, tuning="none")
        if self.sweep == "trees":
            return replace(base, n_trees=value)
        if self.sweep == "n":
            return replace(base, n=value, n_eval=None if self.n_eval is None else value)
        return replace(base, model=SyntheticModel.additive_exp(dimension_rates(value)))

    def to_dict(self) -> dict:
        return {
            "model": self.model.model_id,
            "estimators": list(self.estimators),
            "alphas": list(self.alphas),
            "n": self.n,
            "n_eval": self.n_eval,
            "n_trees": self.n_trees,
            "replications": self.replications,
            "grid": list(self.grid.values),
            "tuning": self.tuning,
            "folds": self.folds,
            "seed": self.seed,
            "sweep": self.sweep,
            "sweep_values": list(self.sweep_values),
            "leaf_size": self.leaf_size,
            "full_leaf_size": self.full_leaf_size,
            "inputs": None if self.inputs is None else list(self.inputs),
            "p_variant": self.p_variant,
        }


@dataclass(frozen=True)
class MetricCell:
    """Metrics of one (estimator, input, level, sweep value) combination."""

    estimator: str
    input_index: int
    alpha: float
    sweep_value: int | None
    true: float
    mean: float
    bias: float
    variance: float
    rmse: float
    replications: int
    wall_time: float
    mean_leaf_size: float

    @classmethod
    def from_estimates(cls, estimator, input_index, alpha, sweep_value, true, values,
                       wall_time, leaves):
        v = np.asarray(values, dtype=np.float64)
        mean = float(np.mean(v))
        return cls(
            estimator=estimator,
            input_index=int(input_index),
            alpha=float(alpha),
            sweep_value=sweep_value,
            true=float(true),
            mean=mean,
            bias=mean - float(true),
            variance=float(np.mean((v - mean) ** 2)),
            rmse=float(np.sqrt(np.mean((v - true) ** 2))),
            replications=int(v.size),
            wall_time=float(wall_time),
            mean_leaf_size=float(np.mean(leaves)),
        )


_COLUMNS = [f for f in MetricCell.__dataclass_fields__]


@dataclass
class MetricsReport:
    """All cells of an experiment plus timing.

    ``replication_times[p][r]`` is the wall time of replication ``r`` at
    sweep point ``p``; ``total_wall_time`` covers the whole run.  After a
    dimension sweep, ``weighted`` holds one row per (estimator, level,
    dimension).
    """

    config: dict
    cells: list = field(default_factory=list)
    replication_times: list = field(default_factory=list)
    total_wall_time: float = 0.0
    weighted: list = field(default_factory=list)

    def cell(self, estimator, input_index, alpha, sweep_value=None) -> MetricCell:
        for c in self.cells:
            if (c.estimator == estimator and c.input_index == input_index
                    and abs(c.alpha - alpha) < 1e-12 and c.sweep_value == sweep_value):
                return c
        raise KeyError((estimator, input_index, alpha, sweep_value))

    def select(self, **match) -> list:
        return [c for c in self.cells if all(getattr(c, k) == v for k, v in match.items())]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
            "replication_times": self.replication_times,
            "total_wall_time": self.total_wall_time,
            "weighted": self.weighted,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def _table(self, delimiter) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(_COLUMNS)
        for c in self.cells:
            w.writerow(["" if getattr(c, k) is None else getattr(c, k) for k in _COLUMNS])
        return buf.getvalue()

    def to_csv(self) -> str:
        return self._table(",")

    def to_tsv(self) -> str:
        """Tab-separated cells, one row per cell, for plotting tools."""
        return self._table("\t")

    def dumps(self, fmt: str) -> str:
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "tsv":
            return self.to_tsv()
        raise ConfigurationError(f"unknown report format {fmt!r}")


def _replicate(cfg: ExperimentConfig, r: int):
    """One replication at one sweep point: ``(results, wall_time)``."""
    t0 = time.perf_counter()
    train = generate(cfg.model, cfg.n, child_seed(cfg.seed, "rep", r, "train"))
    needs_eval = any(EstimatorId(e).needs_eval_sample for e in cfg.estimators)
    ev = None
    if needs_eval:
        ev = generate(cfg.model, cfg.n_eval or cfg.n, child_seed(cfg.seed, "rep", r, "eval"))
    results = estimate_qosa_multi(
        train,
        list(cfg.alphas),
        [EstimatorId(e, cfg.p_variant) for e in cfg.estimators],
        eval_data=ev,
        n_trees=cfg.n_trees,
        tuning=cfg.tuning,
        grid=cfg.grid,
        folds=cfg.folds,
        leaf_size=cfg.leaf_size,
        full_leaf_size=cfg.full_leaf_size,
        seed=child_seed(cfg.seed, "rep", r, "estimate"),
        inputs=cfg.inputs,
    )
    return results, time.perf_counter() - t0


def run_experiment(config: ExperimentConfig, workers: int = 1) -> MetricsReport:
    """Run every replication at every sweep point and score the estimates.

    Replications may run on ``workers`` threads; results are aggregated in
    replication order, so the report does not depend on ``workers``.
    """
    t0 = time.perf_counter()
    report = MetricsReport(config=config.to_dict())
    for value in config.points():
        cfg = config.at(value)
        d = cfg.model.dimension
        inputs = list(range(d)) if cfg.inputs is None else [int(i) for i in cfg.inputs]
        if any(not 0 <= i < d for i in inputs):
            raise ConfigurationError(f"input indices {inputs} out of range for d={d}")
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                runs = list(pool.map(lambda r: _replicate(cfg, r), range(cfg.replications)))
        else:
            runs = [_replicate(cfg, r) for r in range(cfg.replications)]
        times = [t for _, t in runs]
        report.replication_times.append(times)
        for k, tag in enumerate(cfg.estimators):
            for i in inputs:
                for alpha in cfg.alphas:
                    ests = [res[k].get(i, alpha) for res, _ in runs]
                    report.cells.append(
                        MetricCell.from_estimates(
                            tag, i, alpha, value, qosa_true(cfg.model, i + 1, alpha),
                            [e.s_hat for e in ests], sum(times),
                            [e.leaf_size_used for e in ests],
                        )
                    )
    report.total_wall_time = time.perf_counter() - t0
    return report


def weighted_rmse(cells) -> float:
    """RMSE averaged over inputs with the true indices as weights."""
    w = np.array([c.true for c in cells])
    r = np.array([c.rmse for c in cells])
    if not w.sum() > 0:
        raise ConfigurationError("true indices sum to zero; weighted RMSE undefined")
    return float(np.dot(w, r) / w.sum())


def dimension_sweep(config: ExperimentConfig, dimensions=None, workers: int = 1) -> MetricsReport:
    """Additive exponential model over several dimensions.

    For dimension ``d`` the rates are :func:`dimension_rates`.  Besides the
    per-input cells the report lists, per estimator, level and ``d``, the
    RMSE averaged over inputs with weights given by the true indices.
    """
    if dimensions is not None:
        config = replace(config, sweep="dimension", sweep_values=tuple(dimensions))
    if config.sweep != "dimension":
        raise ConfigurationError("dimension_sweep needs sweep='dimension' or a list of dimensions")
    report = run_experiment(config, workers=workers)
    for d in config.sweep_values:
        for tag in config.estimators:
            for alpha in config.alphas:
                cells = [c for c in report.select(estimator=tag, sweep_value=d)
                         if abs(c.alpha - alpha) < 1e-12]
                report.weighted.append({
                    "estimator": tag,
                    "alpha": alpha,
                    "dimension": d,
                    "rates": list(dimension_rates(d)),
                    "weighted_rmse": weighted_rmse(cells),
                })
    return report


def rmse_identity_gap(cell: MetricCell) -> float:
    """``|rmse^2 - (bias^2 + variance)|``; zero up to rounding."""
    return abs(cell.rmse**2 - (cell.bias**2 + cell.variance))

