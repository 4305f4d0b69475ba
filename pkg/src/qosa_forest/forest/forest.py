"""Random forests of CART regression trees viewed as local averaging estimators."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .._rng import child_rng, tree_seeds
from ..dataset import Dataset
from ..errors import ConfigurationError, EstimationError
from . import _leaves
from ._tree import _apply_1d, _apply_forest, _grow, _grow_1d, _sorted_thresholds

__all__ = [
    "SCHEMES",
    "ForestParams",
    "Forest",
    "LeafIndex",
    "WeightVector",
    "build_forest",
]

SCHEMES = ("bootstrap", "original")
LEAF_RULES = ("distinct", "multiplicity")
FORMAT_VERSION = 1

# bound on the number of prefix-table cells per leaf index
_TABLE_BUDGET = 3_000_000


def check_scheme(scheme: str) -> str:
    if scheme not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    return scheme


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    ``max_features=None`` uses every input column.  ``bootstrap_size=None``
    draws ``n`` rows with replacement; ``bootstrap=False`` grows every tree
    on the full sample with unit multiplicities.  ``leaf_rule`` says what
    ``min_samples_leaf`` counts in a child: ``"distinct"`` in-bag rows (the
    usual random-forest convention) or their bootstrap ``"multiplicity"``.
    """

    n_trees: int = 100
    min_samples_leaf: int = 1
    max_features: int | None = None
    seed: int = 0
    bootstrap_size: int | None = None
    bootstrap: bool = True
    leaf_rule: str = "distinct"

    def __post_init__(self):
        if self.leaf_rule not in LEAF_RULES:
            raise ConfigurationError(f"leaf_rule must be one of {LEAF_RULES}, got {self.leaf_rule!r}")
        if int(self.n_trees) < 1:
            raise ConfigurationError(f"n_trees must be >= 1, got {self.n_trees}")
        if int(self.min_samples_leaf) < 1:
            raise ConfigurationError(
                f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}"
            )
        if self.max_features is not None and int(self.max_features) < 1:
            raise ConfigurationError(f"max_features must be >= 1, got {self.max_features}")
        if self.bootstrap_size is not None and int(self.bootstrap_size) < 1:
            raise ConfigurationError(
                f"bootstrap_size must be >= 1, got {self.bootstrap_size}"
            )

    def with_leaf(self, min_samples_leaf: int) -> "ForestParams":
        return replace(self, min_samples_leaf=int(min_samples_leaf))

    def with_seed(self, seed: int) -> "ForestParams":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    scheme: str
    query: np.ndarray


class LeafIndex:
    """Leaf membership of a forest under one weighting scheme.

    Members of each leaf are stored by response rank with weight ``B_j``
    (bootstrap) or 1 (original).  Prefix tables over rank blocks are built
    on first use.  Kernels see responses shifted by their minimum
    (``y_rel``); the pinball loss is translation invariant and a constant
    output then yields contrasts that are exactly zero.
    """

    def __init__(self, forest: "Forest", scheme: str):
        self.scheme = check_scheme(scheme)
        self.y_shift = float(forest.y_sorted[0])
        self.y_sorted = forest.y_sorted
        self.y_rel = forest.y_sorted - self.y_shift
        self.n = forest.n
        self.ptr, self.mem_rank, self.mem_w, self.slot = _leaves.build_members(
            forest.train_leaf,
            forest.counts,
            forest.y_order,
            forest.n_leaves,
            scheme == "bootstrap",
        )
        self.leaf_w, self.leaf_wy = _leaves.leaf_sums(
            self.ptr, self.mem_rank, self.mem_w, self.y_rel
        )
        self._blocks = None

    def _tables(self):
        if self._blocks is None:
            n = self.n
            L = self.leaf_w.shape[0]
            nb_ = max(1, min(-(-n // 16), _TABLE_BUDGET // max(L, 1)))
            bs = -(-n // nb_)
            nb_ = -(-n // bs)
            cw, cwy, pos = _leaves.build_blocks(
                self.ptr, self.mem_rank, self.mem_w, self.y_rel, bs, nb_
            )
            self._blocks = (cw, cwy, pos, bs, nb_)
        return self._blocks

    def mixture(self, leaves, alphas, excl_rank=None, visit=None):
        """Quantile and minimal contrast of the forest mixture for each row.

        ``visit`` is an optional processing order (for instance the queries
        sorted by input value); it does not change the results.  Returns
        ``(quantile, contrast, n_trees_used)`` with arrays of shape
        ``(q, len(alphas))``.
        """
        alphas, back = _sorted_alphas(alphas)
        leaves = np.ascontiguousarray(leaves, dtype=np.int32)
        if excl_rank is None:
            excl_rank = np.full(leaves.shape[0], -1, dtype=np.int64)
        cw, cwy, pos, bs, nb_ = self._tables()
        if visit is None:
            visit = np.arange(leaves.shape[0])
        qv, cv, used = _leaves.mixture_quantiles(
            leaves, np.asarray(excl_rank, dtype=np.int64), alphas, self.mem_rank,
            self.mem_w, self.leaf_w, self.leaf_wy, self.y_rel, self.y_sorted, cw, cwy,
            pos, bs, nb_, np.asarray(visit, dtype=np.int64),
        )
        return qv[:, back], cv[:, back], used

    def leaf_table(self, alphas):
        """Per-leaf quantile and minimal contrast, shape ``(n_leaves, na)``."""
        alphas, back = _sorted_alphas(alphas)
        qv, cv = _leaves.leaf_quantiles(
            self.ptr, self.mem_rank, self.mem_w, self.leaf_w, self.leaf_wy,
            self.y_rel, self.y_sorted, alphas,
        )
        return qv[:, back], cv[:, back]

    def dense(self, leaves):
        """Weights over response ranks averaged over the rows of ``leaves``."""
        leaves = np.ascontiguousarray(leaves, dtype=np.int32)
        return _leaves.dense_weights(
            leaves, self.ptr, self.mem_rank, self.mem_w, self.leaf_w, self.n
        )


def _sorted_alphas(alphas):
    a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    idx = np.argsort(a, kind="stable")
    back = np.empty_like(idx)
    back[idx] = np.arange(a.size)
    return np.ascontiguousarray(a[idx]), back


class Forest:
    """A fitted forest with its training sample.

    Trees are stored as concatenated node arrays; tree ``t`` owns nodes
    ``node_offset[t]:node_offset[t+1]`` and global leaf ids
    ``leaf_offset[t]:leaf_offset[t+1]``.  ``counts[t, j]`` is the bootstrap
    multiplicity ``B_j`` of training row ``j`` in tree ``t`` and
    ``train_leaf[t, j]`` the global leaf holding that row.
    """

    def __init__(self, X, y, params, counts, feature, threshold, left, right, leaf,
                 node_offset, leaf_offset):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.params = params
        self.counts = np.ascontiguousarray(counts, dtype=np.int32)
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.leaf = leaf
        self.node_offset = node_offset
        self.leaf_offset = leaf_offset
        if self.d == 1:
            self._thr, self._thr_offset = _sorted_thresholds(threshold, leaf, node_offset)
        self.train_leaf = self._apply_T(self.X)
        self.y_order = np.argsort(self.y, kind="stable")
        self.y_rank = np.empty(self.n, dtype=np.int64)
        self.y_rank[self.y_order] = np.arange(self.n)
        self.y_sorted = np.ascontiguousarray(self.y[self.y_order])
        self._index = {}

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_trees(self) -> int:
        return self.node_offset.shape[0] - 1

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_offset[-1])

    def leaves_per_tree(self) -> np.ndarray:
        return np.diff(self.leaf_offset)

    def _check_query(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 0 or (X.ndim == 1 and self.d == 1):
            X = X.reshape(-1, 1)
        elif X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ConfigurationError(
                f"query shape {X.shape} does not match forest input count {self.d}"
            )
        return np.ascontiguousarray(X)

    def _apply_T(self, X) -> np.ndarray:
        if self.d == 1:
            x = np.ascontiguousarray(X[:, 0])
            return _apply_1d(
                x, np.argsort(x, kind="stable"), self._thr, self._thr_offset,
                self.leaf_offset,
            )
        return np.ascontiguousarray(self.apply_nodes(X).T)

    def apply_nodes(self, X) -> np.ndarray:
        """Leaf ids by descending every tree from its root, shape ``(q, k)``."""
        X = self._check_query(X)
        return _apply_forest(
            X, self.feature, self.threshold, self.left, self.right, self.leaf,
            self.node_offset, self.leaf_offset,
        )

    def apply(self, X) -> np.ndarray:
        """Global leaf id for every row of ``X`` in every tree, shape ``(q, k)``."""
        X = self._check_query(X)
        if self.d == 1:
            return np.ascontiguousarray(self._apply_T(X).T)
        return self.apply_nodes(X)

    def index(self, scheme: str) -> LeafIndex:
        check_scheme(scheme)
        if scheme not in self._index:
            self._index[scheme] = LeafIndex(self, scheme)
        return self._index[scheme]

    def oob_leaves(self) -> np.ndarray:
        """Leaf of every training row per tree, ``-1`` where the row is in-bag."""
        out = self.train_leaf.T.copy()
        out[self.counts.T > 0] = -1
        return out

    def _to_rows(self, dense_by_rank) -> np.ndarray:
        w = np.empty(self.n)
        w[self.y_order] = dense_by_rank
        return w

    def weights(self, x, scheme: str = "original") -> WeightVector:
        """Forest weights of the training rows at query ``x``."""
        x = self._check_query(x)
        if x.shape[0] != 1:
            raise ConfigurationError("weights expects a single query point")
        idx = self.index(scheme)
        leaves = self.apply(x)
        if np.any(idx.leaf_w[leaves[0]] <= 0):
            raise EstimationError("empty leaf under the bootstrap scheme")
        return WeightVector(self._to_rows(idx.dense(leaves)), scheme, x[0].copy())

    def predict_mean(self, X, scheme: str = "original") -> np.ndarray:
        """Weighted-mean prediction ``sum_j w_j(x) Y^j`` for each row of ``X``."""
        X = self._check_query(X)
        idx = self.index(scheme)
        leaves = self.apply(X)
        mean = idx.leaf_wy / np.where(idx.leaf_w > 0, idx.leaf_w, np.nan)
        return _leaves.tree_average(leaves, mean[:, None])[:, 0] + idx.y_shift

    def predict_trees(self, X) -> np.ndarray:
        """Average over trees of the bootstrap cell means, computed per tree."""
        X = self._check_query(X)
        leaves = self.apply(X)
        out = np.zeros(X.shape[0])
        for t in range(self.n_trees):
            c = self.counts[t].astype(np.float64)
            tl = self.train_leaf[t]
            for r in range(X.shape[0]):
                member = tl == leaves[r, t]
                out[r] += np.dot(c[member], self.y[member]) / c[member].sum()
        return out / self.n_trees

    def averaged_weights(self, i: int, x_i: float, shadow, scheme: str = "original") -> WeightVector:
        """Weights at ``x_i`` averaged over the shadow rows of the other inputs.

        ``shadow`` holds ``n`` rows of the ``d - 1`` inputs other than ``i``;
        each row is completed with ``x_i`` in position ``i``.
        """
        if not 0 <= i < self.d:
            raise ConfigurationError(f"input index {i} out of range for d={self.d}")
        shadow = np.asarray(shadow, dtype=np.float64)
        if self.d == 1 and shadow.size == 0:
            return self.weights(np.array([[x_i]]), scheme)
        if shadow.ndim != 2 or shadow.shape[1] != self.d - 1:
            raise ConfigurationError(
                f"shadow must have {self.d - 1} columns, got shape {shadow.shape}"
            )
        queries = np.insert(shadow, i, x_i, axis=1)
        idx = self.index(scheme)
        dense = idx.dense(self.apply(queries))
        return WeightVector(self._to_rows(dense), scheme, np.array([x_i]))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": asdict(self.params),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "counts": self.counts.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf": self.leaf.tolist(),
            "node_offset": self.node_offset.tolist(),
            "leaf_offset": self.leaf_offset.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Forest":
        if data.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(
                f"unsupported forest format version {data.get('format_version')!r}"
            )
        i32 = lambda k: np.asarray(data[k], dtype=np.int32)  # noqa: E731
        return cls(
            np.asarray(data["X"], dtype=np.float64),
            np.asarray(data["y"], dtype=np.float64),
            ForestParams(**data["params"]),
            np.asarray(data["counts"], dtype=np.int32),
            i32("feature"),
            np.asarray(data["threshold"], dtype=np.float64),
            i32("left"),
            i32("right"),
            i32("leaf"),
            np.asarray(data["node_offset"], dtype=np.int64),
            np.asarray(data["leaf_offset"], dtype=np.int64),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _bootstrap_counts(seed, n_trees, n, size):
    # rows are filled in order from one stream, so tree t's draws do not
    # depend on how many trees follow it
    draws = child_rng(seed, "bootstrap").integers(0, n, size=(n_trees, size))
    flat = draws + (np.arange(n_trees) * n)[:, None]
    return np.bincount(flat.ravel(), minlength=n_trees * n).reshape(n_trees, n).astype(np.int32)


def build_forest(data, params: ForestParams) -> Forest:
    """Grow ``params.n_trees`` CART trees on ``data``.

    ``data`` is a :class:`Dataset` or an ``(X, y)`` pair.  Each tree draws
    a bootstrap sample, then grows greedily: at every node ``max_features``
    candidate inputs are drawn without replacement and the split with the
    largest weighted variance reduction is kept, provided both children hold
    at least ``min_samples_leaf`` distinct bootstrap rows.
    """
    if isinstance(data, Dataset):
        X, y = data.inputs, data.output
    else:
        X, y = data
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    X = np.ascontiguousarray(X)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    n, d = X.shape
    if n < 1 or y.shape[0] != n:
        raise ConfigurationError("training data is empty or misaligned")
    mf = d if params.max_features is None else int(params.max_features)
    if mf > d:
        raise ConfigurationError(f"max_features={mf} exceeds the input count {d}")
    k = int(params.n_trees)
    msl = int(params.min_samples_leaf)
    by_mult = params.leaf_rule == "multiplicity"
    if params.bootstrap:
        size = n if params.bootstrap_size is None else int(params.bootstrap_size)
        counts = _bootstrap_counts(params.seed, k, n, size)
    else:
        counts = np.ones((k, n), dtype=np.int32)
    seeds = tree_seeds(params.seed, k)
    xorder = np.argsort(X[:, 0], kind="stable")
    parts = []
    for t in range(k):
        if d == 1:
            parts.append(_grow_1d(X[:, 0], y, xorder, counts[t], msl, by_mult))
        else:
            parts.append(_grow(X, y, xorder, counts[t], msl, mf, seeds[t], by_mult))
    sizes = np.array([p[0].shape[0] for p in parts], dtype=np.int64)
    node_offset = np.concatenate(([0], np.cumsum(sizes)))
    leaf_offset = np.concatenate(([0], np.cumsum([p[5] for p in parts]))).astype(np.int64)
    cat = lambda j: np.concatenate([p[j] for p in parts])  # noqa: E731
    return Forest(X, y, params, counts, cat(0), cat(1), cat(2), cat(3), cat(4),
                  node_offset, leaf_offset)
