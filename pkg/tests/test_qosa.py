import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qosa_forest._rng import child_seed
from qosa_forest.cond_dist import CondQuantileMethod
from qosa_forest.dataset import Dataset, SyntheticModel, generate
from qosa_forest.errors import ConfigurationError, DegenerateOutputError
from qosa_forest.forest import ForestParams, build_forest
from qosa_forest.oracle import expdiff_O_true
from qosa_forest.qosa import (
    EstimatorId,
    QosaResult,
    assemble_index,
    estimate_O_min_full,
    estimate_O_min_full_reference,
    estimate_O_min_in_leaf,
    estimate_O_min_weighted,
    estimate_O_quantile,
    estimate_P1,
    estimate_P2,
    estimate_qosa,
    estimate_qosa_multi,
    pinball,
)
from qosa_forest.tuning import LeafGrid, forest_seed

R_METHODS = [CondQuantileMethod(f, s) for f in ("weighted_cdf", "in_leaf") for s in ("bootstrap", "original")]


def test_pinball_examples():
    assert pinball(1, 1, 0.3) == 0
    assert pinball(2, 1, 0.3) == pytest.approx(0.3)
    assert pinball(0, 1, 0.3) == pytest.approx(0.7)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.001, 0.999))
def test_pinball_nonnegative(y, theta, alpha):
    v = pinball(y, theta, alpha)
    assert v >= 0
    if y != theta:
        assert v > 0


def test_p_terms_small_sample():
    assert estimate_P1([0.0, 1.0], 0.5) == 0.25
    assert estimate_P2([0.0, 1.0], 0.5) == 0.25
    assert estimate_P1([2.0, 2.0, 2.0], 0.3) == 0.0
    assert estimate_P2([2.0, 2.0, 2.0], 0.3) == 0.0
    with pytest.raises(ConfigurationError):
        estimate_P1([1.0], 0.5)


def test_p_terms_laplace():
    y = np.random.default_rng(4).laplace(size=100_000)
    assert estimate_P1(y, 0.5) == pytest.approx(0.5, abs=0.01)
    assert estimate_P2(y, 0.5) == pytest.approx(0.5, abs=0.01)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=60),
    st.floats(0.01, 0.99),
)
def test_p2_never_exceeds_p1(sample, alpha):
    assert estimate_P2(sample, alpha) <= estimate_P1(sample, alpha)


def test_p2_is_the_brute_force_minimum(rng):
    for _ in range(50):
        y = np.round(rng.normal(size=rng.integers(2, 40)), 1)
        a = rng.uniform(0.02, 0.98)
        brute = min(np.mean(pinball(y, t, a)) for t in y)
        assert estimate_P2(y, a) == pytest.approx(brute, abs=1e-12)


def test_assemble_index():
    assert assemble_index(0.4, 0.4) == 0.0
    assert assemble_index(0.4, 0.0) == 1.0
    assert assemble_index(0.5, 0.34657) == pytest.approx(0.30686)
    assert assemble_index(0.5, 0.6) < 0
    with pytest.raises(DegenerateOutputError):
        assemble_index(0.0, 0.0)


def test_estimator_ids():
    assert EstimatorId("q2o").tag == "Q2o"
    assert EstimatorId("Q1b").scheme == "bootstrap"
    assert not EstimatorId("Q2o").needs_eval_sample
    assert EstimatorId("R2b").quantile_method == CondQuantileMethod("in_leaf", "bootstrap")
    with pytest.raises(ConfigurationError):
        EstimatorId("Q4o")
    with pytest.raises(ConfigurationError):
        EstimatorId("Q1o", "P3")


def constant_forest(d=1, n=200):
    X = np.random.default_rng(0).exponential(size=(n, d))
    return X, build_forest((X, np.full(n, 3.0)), ForestParams(n_trees=10, min_samples_leaf=5))


def test_every_O_estimator_vanishes_on_constant_output():
    X, f = constant_forest()
    Xe = np.random.default_rng(1).exponential(size=(50, 1))
    for m in R_METHODS:
        assert estimate_O_quantile(f, Xe, np.full(50, 3.0), 0.4, m) == 0.0
    for scheme in ("bootstrap", "original"):
        assert estimate_O_min_weighted(f, Xe, 0.4, scheme) == 0.0
        assert estimate_O_min_in_leaf(f, 0.4, scheme) == 0.0
    X2, f2 = constant_forest(d=2)
    shadow = np.random.default_rng(2).exponential(size=(40, 2))
    for scheme in ("bootstrap", "original"):
        assert estimate_O_min_full(f2, 0, shadow, 0.4, scheme) == 0.0


def root_only(n_trees=3):
    ds = generate(SyntheticModel.exp_diff(), 300, 5)
    return ds, build_forest(ds.view(0), ForestParams(n_trees=n_trees, min_samples_leaf=300, seed=1))


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.8])
def test_root_only_minimum_estimators_equal_P2(alpha):
    ds, f = root_only()
    p2 = estimate_P2(ds.output, alpha)
    Xe = np.random.default_rng(3).exponential(size=(20, 1))
    assert estimate_O_min_weighted(f, Xe, alpha) == pytest.approx(p2, abs=1e-12)
    assert estimate_O_min_in_leaf(f, alpha) == pytest.approx(p2, abs=1e-12)
    full = build_forest(ds, ForestParams(n_trees=3, min_samples_leaf=300, seed=1))
    shadow = np.random.default_rng(4).exponential(size=(15, 2))
    assert estimate_O_min_full(full, 1, shadow, alpha) == pytest.approx(p2, abs=1e-12)


def test_single_root_tree_in_leaf_equals_P2():
    ds, f = root_only(n_trees=1)
    assert estimate_O_min_in_leaf(f, 0.3) == pytest.approx(estimate_P2(ds.output, 0.3), abs=1e-12)


def test_min_weighted_matches_brute_force(rng):
    ds = generate(SyntheticModel.exp_diff(), 300, 6)
    f = build_forest(ds.view(0), ForestParams(n_trees=8, min_samples_leaf=10, seed=3))
    Xe = rng.exponential(size=25)
    for scheme in ("bootstrap", "original"):
        for a in (0.2, 0.65):
            mins = []
            for x in Xe:
                w = f.weights(x, scheme).weights
                mins.append(min(np.dot(w, pinball(f.y, t, a)) for t in f.y[w > 0]))
            assert estimate_O_min_weighted(f, Xe, a, scheme) == pytest.approx(np.mean(mins), abs=1e-12)


def test_min_in_leaf_matches_brute_force():
    ds = generate(SyntheticModel.exp_diff(), 250, 7)
    f = build_forest(ds.view(1), ForestParams(n_trees=5, min_samples_leaf=12, seed=4))
    for scheme in ("bootstrap", "original"):
        per_tree = []
        for t in range(f.n_trees):
            leaf_mins = []
            for leaf in np.unique(f.train_leaf[t]):
                member = f.train_leaf[t] == leaf
                c = f.counts[t] * member if scheme == "bootstrap" else member
                c = c.astype(float)
                if c.sum() == 0:
                    continue
                c /= c.sum()
                leaf_mins.append(min(np.dot(c, pinball(f.y, th, 0.7)) for th in f.y[c > 0]))
            per_tree.append(np.mean(leaf_mins))
        assert estimate_O_min_in_leaf(f, 0.7, scheme) == pytest.approx(np.mean(per_tree), abs=1e-12)


def test_min_full_matches_reference():
    ds = generate(SyntheticModel.additive_exp((0.5, 1.0, 1.5)), 200, 8)
    f = build_forest(ds, ForestParams(n_trees=6, min_samples_leaf=2, seed=5))
    shadow = generate(SyntheticModel.additive_exp((0.5, 1.0, 1.5)), 30, 9).inputs
    for i in range(3):
        for scheme in ("bootstrap", "original"):
            fast = estimate_O_min_full(f, i, shadow, [0.25, 0.9], scheme)
            ref = estimate_O_min_full_reference(f, i, shadow, [0.25, 0.9], scheme)
            np.testing.assert_allclose(fast, ref, atol=1e-12)


def test_min_full_one_input_equals_min_weighted():
    ds = generate(SyntheticModel.exp_diff(), 400, 10).view(0)
    f = build_forest(ds, ForestParams(n_trees=10, min_samples_leaf=4, seed=6))
    shadow = np.random.default_rng(11).exponential(size=(60, 1))
    for scheme in ("bootstrap", "original"):
        assert estimate_O_min_full(f, 0, shadow, 0.35, scheme) == pytest.approx(
            estimate_O_min_weighted(f, shadow, 0.35, scheme), abs=1e-12
        )


def test_vector_alpha_matches_scalar(rng):
    ds = generate(SyntheticModel.exp_diff(), 300, 12)
    f = build_forest(ds.view(0), ForestParams(n_trees=5, min_samples_leaf=9, seed=2))
    Xe, ye = rng.exponential(size=40), rng.normal(size=40)
    alphas = [0.9, 0.2, 0.5]
    vec = estimate_O_min_weighted(f, Xe, alphas)
    for a, v in zip(alphas, vec):
        assert estimate_O_min_weighted(f, Xe, a) == pytest.approx(v, abs=1e-14)
    vec = estimate_O_quantile(f, Xe, ye, alphas, R_METHODS[3])
    for a, v in zip(alphas, vec):
        assert estimate_O_quantile(f, Xe, ye, a, R_METHODS[3]) == pytest.approx(v, abs=1e-14)


def test_arity_mismatch():
    _, f = constant_forest()
    with pytest.raises(ConfigurationError):
        estimate_O_quantile(f, np.zeros((5, 2)), np.zeros(5), 0.5, R_METHODS[0])
    with pytest.raises(ConfigurationError):
        estimate_O_quantile(f, np.zeros((5, 1)), np.zeros(4), 0.5, R_METHODS[0])


def test_R1o_at_leaf_258_alpha_01(expdiff):
    train, ev = expdiff
    f = build_forest(train.view(0), ForestParams(n_trees=500, min_samples_leaf=258, seed=3))
    o = estimate_O_quantile(f, ev.inputs[:, 0], ev.output, 0.1, CondQuantileMethod())
    assert o == pytest.approx(expdiff_O_true(0.1, 1), abs=0.02)


def test_R1o_tuned_alpha_05(expdiff, tuned_x1):
    _, ev = expdiff
    _, f = tuned_x1(0.5)
    o = estimate_O_quantile(f, ev.inputs[:, 0], ev.output, 0.5, CondQuantileMethod())
    assert o == pytest.approx(0.34657, abs=0.02)


def test_Q1o_tuned_alpha_05(expdiff, tuned_x1):
    _, ev = expdiff
    _, f = tuned_x1(0.5)
    assert estimate_O_min_weighted(f, ev.inputs[:, 0], 0.5) == pytest.approx(0.34657, abs=0.015)


def test_Q2o_tuned_alpha_075(tuned_x1):
    _, f = tuned_x1(0.75)
    assert estimate_O_min_in_leaf(f, 0.75) == pytest.approx(0.75 * math.log(4 / 3), abs=0.015)


@pytest.mark.slow
def test_Q3o_full_trees_alpha_09(expdiff):
    train, ev = expdiff
    f = build_forest(train, ForestParams(n_trees=100, min_samples_leaf=2, seed=21))
    assert estimate_O_min_full(f, 0, ev.inputs, 0.9) == pytest.approx(0.09482, abs=0.02)


def test_procedure_records(expdiff):
    train, ev = expdiff
    small_t, small_e = train.subset(slice(0, 1000)), ev.subset(slice(0, 1000))
    res = estimate_qosa(small_t, [0.3, 0.7], "Q1o", eval_data=small_e, n_trees=20,
                        tuning="none", leaf_size=30, seed=4)
    assert len(res.estimates) == 4
    for e in res.estimates:
        assert e.s_hat == 1.0 - e.o_hat / e.p_hat
        assert e.leaf_size_used == 30 and e.estimator == "Q1o"
    again = QosaResult.from_dict(res.to_dict())
    assert again.estimates == res.estimates


def test_procedure_requires_eval_sample(expdiff):
    train, _ = expdiff
    with pytest.raises(ConfigurationError):
        estimate_qosa(train, 0.5, "R1o", tuning="none", leaf_size=20)
    with pytest.raises(ConfigurationError):
        estimate_qosa(train, 0.5, "Q2o", tuning="none")


def test_constant_output_rejected():
    ds = Dataset(np.random.default_rng(0).normal(size=(100, 2)), np.ones(100))
    with pytest.raises(DegenerateOutputError):
        estimate_qosa(ds, 0.5, "Q2o", n_trees=5, tuning="none", leaf_size=10)


def test_multi_matches_single(expdiff):
    train, ev = expdiff
    t, e = train.subset(slice(0, 800)), ev.subset(slice(0, 800))
    kw = dict(eval_data=e, n_trees=10, tuning="cv", seed=9,
              grid=LeafGrid((10, 40, 80)))
    tags = ["R2o", "Q1o", "Q2b", "Q3o"]
    multi = estimate_qosa_multi(t, [0.25, 0.6], tags, **kw)
    for tag, res in zip(tags, multi):
        single = estimate_qosa(t, [0.25, 0.6], tag, **kw)
        assert res.estimates == single.estimates


def test_final_forest_seed_is_reproducible(expdiff):
    train, _ = expdiff
    t = train.subset(slice(0, 600))
    res = estimate_qosa(t, 0.5, "Q2o", n_trees=10, tuning="none", leaf_size=25, seed=3, inputs=[0])
    base = child_seed(3, "input", 0)
    f = build_forest(t.view(0), ForestParams(n_trees=10, min_samples_leaf=25, seed=forest_seed(base, 25)))
    assert res.estimates[0].o_hat == estimate_O_min_in_leaf(f, 0.5)


def test_noise_input_has_no_index(expdiff):
    train, _ = expdiff
    noise = np.random.default_rng(77).uniform(size=train.n)
    ds = Dataset(np.column_stack([train.inputs, noise]), train.output)
    res = estimate_qosa(ds, 0.5, "Q2o", n_trees=100, tuning="cv", seed=5, inputs=[2])
    assert abs(res.estimates[0].s_hat) <= 0.05


def test_symmetry_between_inputs(expdiff):
    train, _ = expdiff
    s1 = estimate_qosa(train, 0.25, "Q2o", n_trees=100, seed=6, inputs=[0]).estimates[0].s_hat
    s2 = estimate_qosa(train, 0.75, "Q2o", n_trees=100, seed=6, inputs=[1]).estimates[0].s_hat
    assert abs(s1 - s2) <= 0.03
