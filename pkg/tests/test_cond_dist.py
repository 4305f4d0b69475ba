import math
import warnings

import numpy as np
import pytest

from qosa_forest.cond_dist import (
    Alpha,
    CondQuantileMethod,
    ccdf,
    check_alphas,
    cond_quantile_in_leaf,
    cond_quantile_weighted,
    cond_quantiles,
    oob_quantile,
    oob_quantiles,
)
from qosa_forest.dataset import SyntheticModel, generate
from qosa_forest.errors import ConfigurationError
from qosa_forest.forest import ForestParams, build_forest
from qosa_forest.oracle import expdiff_cond_cdf, expdiff_cond_quantile
from qosa_forest.qosa.contrast import empirical_quantile

METHODS = [CondQuantileMethod(f, s) for f in ("weighted_cdf", "in_leaf") for s in ("bootstrap", "original")]


def inf_quantile(values, weights, alpha):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    c = np.cumsum(w) / w.sum()
    return v[np.searchsorted(c, alpha - 1e-12)]


def brute_oob(forest, m, alpha, method):
    """OOB quantile at training row m from explicit per-tree leaf members."""
    trees = [t for t in range(forest.n_trees) if forest.counts[t, m] == 0]
    if not trees:
        return math.nan
    leaf_of_m = forest.train_leaf[:, m]
    excl = method.scheme == "original"
    w_total = np.zeros(forest.n)
    per_tree = []
    for t in trees:
        member = forest.train_leaf[t] == leaf_of_m[t]
        c = forest.counts[t].astype(float) if method.scheme == "bootstrap" else np.ones(forest.n)
        c = c * member
        if excl:
            c[m] = 0
        if c.sum() == 0:
            continue
        w_total += c / c.sum()
        per_tree.append(inf_quantile(forest.y, c, alpha))
    if method.family == "weighted_cdf":
        return inf_quantile(forest.y, w_total, alpha)
    return float(np.mean(per_tree))


@pytest.fixture(scope="module")
def small():
    ds = generate(SyntheticModel.exp_diff(), 300, 9)
    return build_forest(ds.view(0), ForestParams(n_trees=15, min_samples_leaf=8, seed=2))


def test_alpha_validation():
    assert float(Alpha(0.3)) == 0.3
    for bad in (0.0, 1.0, -0.1, 1.5, "x"):
        with pytest.raises(ConfigurationError):
            Alpha(bad)
    with pytest.raises(ConfigurationError):
        check_alphas([])


def test_method_tags():
    assert [m.tag for m in METHODS] == ["R1b", "R1o", "R2b", "R2o"]
    for m in METHODS:
        assert CondQuantileMethod.from_tag(m.tag) == m
    with pytest.raises(ConfigurationError):
        CondQuantileMethod("kernel", "original")


@pytest.mark.parametrize("scheme", ["bootstrap", "original"])
def test_ccdf_bounds_and_monotone(small, scheme, rng):
    y = small.y
    for x in rng.exponential(size=5):
        assert ccdf(small, x, y.min() - 1, scheme) == 0.0
        assert ccdf(small, x, y.max(), scheme) == 1.0
        vals = ccdf(small, x, np.sort(y), scheme)
        assert np.all(np.diff(vals) >= 0)
        assert vals.min() >= 0 and vals.max() <= 1


def test_ccdf_root_only_is_ecdf():
    ds = generate(SyntheticModel.exp_diff(), 80, 1)
    f = build_forest(ds.view(0), ForestParams(n_trees=1, min_samples_leaf=80))
    grid = np.linspace(-3, 3, 50)
    ecdf = np.array([(ds.output <= t).mean() for t in grid])
    np.testing.assert_allclose(ccdf(f, 0.3, grid, "original"), ecdf, atol=1e-12)


def test_ccdf_sup_distance_to_true_conditional_cdf(tuned_x1):
    _, f = tuned_x1(0.5)
    y = np.sort(f.y)
    fhat = ccdf(f, 1.0, y, "original")
    truth = expdiff_cond_cdf(y, 1.0)
    # compare both sides of every step of the estimate
    left = np.concatenate(([0.0], fhat[:-1]))
    sup = max(np.abs(fhat - truth).max(), np.abs(left - truth).max())
    assert sup <= 0.05, f"sup distance {sup:.4f}"


def test_weighted_quantile_is_a_training_response(small, rng):
    q = cond_quantile_weighted(small, rng.exponential(size=20), 0.37)
    assert np.isin(q, small.y).all()


def test_root_only_median_is_order_statistic():
    ds = generate(SyntheticModel.exp_diff(), 101, 2)
    f = build_forest(ds.view(0), ForestParams(n_trees=1, min_samples_leaf=101))
    expected = np.sort(ds.output)[math.ceil(101 * 0.5) - 1]
    assert cond_quantile_weighted(f, 0.5, 0.5, "original") == expected
    assert cond_quantile_in_leaf(f, 0.5, 0.5, "original") == expected


def test_root_only_equals_unconditional_quantile():
    ds = generate(SyntheticModel.exp_diff(), 200, 3)
    f = build_forest(ds.view(0), ForestParams(n_trees=3, min_samples_leaf=200))
    for a in (0.05, 0.3, 0.77):
        q = empirical_quantile(ds.output, a)
        assert cond_quantile_weighted(f, 1.0, a, "original") == q
        assert cond_quantile_in_leaf(f, 1.0, a, "original") == pytest.approx(q, abs=1e-12)


def test_weighted_quantile_monotone_in_alpha(small, rng):
    alphas = np.linspace(0.01, 0.99, 60)
    X = rng.exponential(size=(10, 1))
    for m in METHODS[:2]:
        q = cond_quantiles(small, X, alphas, m)
        assert np.all(np.diff(q, axis=1) >= 0)


def test_quantile_near_truth(tuned_x1):
    _, f = tuned_x1(0.9)
    q = cond_quantile_weighted(f, 1.0, 0.9, "original")
    assert abs(q - expdiff_cond_quantile(0.9, 1.0)) <= 0.1


def test_single_tree_families_coincide(rng):
    ds = generate(SyntheticModel.exp_diff(), 400, 4)
    f = build_forest(ds.view(0), ForestParams(n_trees=1, min_samples_leaf=10, seed=8))
    X = rng.exponential(size=30)
    for scheme in ("bootstrap", "original"):
        for a in (0.1, 0.5, 0.9):
            np.testing.assert_array_equal(
                cond_quantile_weighted(f, X, a, scheme), cond_quantile_in_leaf(f, X, a, scheme)
            )


def test_in_leaf_constant_leaf():
    X = np.linspace(0, 1, 50)[:, None]
    f = build_forest((X, np.full(50, -2.0)), ForestParams(n_trees=4, min_samples_leaf=5))
    assert cond_quantile_in_leaf(f, 0.3, 0.8) == -2.0


def test_in_leaf_matches_brute_force(small, rng):
    for x in rng.exponential(size=5):
        leaves = small.apply(np.array([[x]]))[0]
        for scheme in ("bootstrap", "original"):
            per_tree = []
            for t in range(small.n_trees):
                member = small.train_leaf[t] == leaves[t]
                c = small.counts[t] * member if scheme == "bootstrap" else member.astype(float)
                per_tree.append(inf_quantile(small.y, c.astype(float), 0.35))
            assert cond_quantile_in_leaf(small, x, 0.35, scheme) == pytest.approx(np.mean(per_tree), abs=1e-12)


def test_in_leaf_agrees_with_weighted(tuned_x1, expdiff):
    _, f = tuned_x1(0.5)
    _, ev = expdiff
    X = ev.inputs[:100, 0]
    gap = np.abs(cond_quantile_weighted(f, X, 0.5) - cond_quantile_in_leaf(f, X, 0.5))
    assert gap.mean() <= 0.05


@pytest.mark.parametrize("method", METHODS, ids=lambda m: m.tag)
def test_oob_matches_brute_force(small, method):
    alphas = [0.2, 0.5, 0.85]
    qv, used = oob_quantiles(small, alphas, method)
    for m in range(0, small.n, 7):
        for a, al in enumerate(alphas):
            expected = brute_oob(small, m, al, method)
            if math.isnan(expected):
                assert used[m] == 0
            else:
                assert qv[m, a] == pytest.approx(expected, abs=1e-12)


def test_oob_single_row_api(small):
    m = int(np.flatnonzero(small.counts[0] == 0)[0])
    method = CondQuantileMethod("weighted_cdf", "original")
    assert oob_quantile(small, m, 0.4, method) == pytest.approx(brute_oob(small, m, 0.4, method))


def test_oob_skip_fraction_large_forest():
    ds = generate(SyntheticModel.exp_diff(), 1000, 5)
    f = build_forest(ds.view(0), ForestParams(n_trees=50, min_samples_leaf=10, seed=1))
    _, used = oob_quantiles(f, 0.5, CondQuantileMethod())
    assert (used == 0).mean() < 0.01


def test_oob_in_bag_everywhere_is_skipped(small):
    one = build_forest((small.X, small.y), ForestParams(n_trees=1, min_samples_leaf=8, seed=2))
    m = int(np.flatnonzero(one.counts[0] > 0)[0])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert math.isnan(oob_quantile(one, m, 0.5, CondQuantileMethod()))
    assert rec


def test_oob_root_only_leaves_out_m():
    ds = generate(SyntheticModel.exp_diff(), 60, 6)
    f = build_forest(ds.view(0), ForestParams(n_trees=1, min_samples_leaf=60, seed=3))
    m = int(np.flatnonzero(f.counts[0] == 0)[0])
    rest = np.delete(ds.output, m)
    for family in ("weighted_cdf", "in_leaf"):
        q = oob_quantile(f, m, 0.3, CondQuantileMethod(family, "original"))
        assert q == empirical_quantile(rest, 0.3)


def test_oob_needs_bootstrap():
    ds = generate(SyntheticModel.exp_diff(), 30, 6)
    f = build_forest(ds.view(0), ForestParams(n_trees=2, bootstrap=False))
    with pytest.raises(ConfigurationError):
        oob_quantiles(f, 0.5, CondQuantileMethod())
