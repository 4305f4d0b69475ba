import numpy as np
import pytest

from qosa_forest.dataset import SyntheticModel, generate


@pytest.fixture(scope="session")
def expdiff():
    """ExpDiff training and evaluation samples of size 10^4."""
    model = SyntheticModel.exp_diff()
    return generate(model, 10_000, 1), generate(model, 10_000, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_TUNED = {}


@pytest.fixture(scope="session")
def tuned_x1(expdiff):
    """CV-tuned (R1o, 3 folds, 100 trees) forest on input X1 of ExpDiff, per alpha."""
    from qosa_forest.cond_dist import CondQuantileMethod
    from qosa_forest.forest import ForestParams, build_forest
    from qosa_forest.tuning import LeafGrid, cv_tune, forest_seed

    train, _ = expdiff

    def get(alpha):
        if alpha not in _TUNED:
            params = ForestParams(n_trees=100, seed=17)
            rep = cv_tune(train.view(0), LeafGrid.default(), 3, alpha,
                          CondQuantileMethod("weighted_cdf", "original"), params)
            forest = build_forest(
                train.view(0), params.with_leaf(rep.selected).with_seed(forest_seed(17, rep.selected))
            )
            _TUNED[alpha] = (rep, forest)
        return _TUNED[alpha]

    return get
