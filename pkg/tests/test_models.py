import numpy as np
import pytest

from ethmerge.errors import DegenerateDesign, InvalidSpec
from ethmerge.models import (
    DEFAULTS,
    canonical_kind,
    decode_array,
    encode_array,
    make_model,
    resolve_hyperparameters,
)
from ethmerge.rng import SplitMix64


def rand(seed, *shape):
    return SplitMix64(seed).normal_array(int(np.prod(shape))).reshape(shape)


def model(kind, seed=0, n_jobs=1, **hp):
    return make_model(kind, resolve_hyperparameters(canonical_kind(kind), hp), seed, n_jobs)


# -- linear -----------------------------------------------------------------------------

def test_linear_recovers_plane():
    X = rand(1, 200, 2)
    y = 2 * X[:, 0] - 3 * X[:, 1] + 1
    m = model("linear").fit(X, y)
    assert np.allclose(m.coef, [2, -3], atol=1e-8) and abs(m.intercept - 1) <= 1e-8


def test_linear_normal_equation_oracle():
    for t in range(100):
        n, p = 50 + t, 1 + t % 8
        X = rand(100 + t, n, p)
        y = rand(900 + t, n)
        m = model("linear").fit(X, y)
        A = np.column_stack([X, np.ones(n)])
        oracle = np.linalg.solve(A.T @ A, A.T @ y)
        got = np.append(m.coef, m.intercept)
        assert np.max(np.abs(got - oracle)) <= 1e-8 * max(1.0, np.max(np.abs(oracle)))


def test_linear_rank_deficient():
    X = rand(2, 40, 2)
    X = np.column_stack([X, X[:, 0]])
    y = X[:, 0] + X[:, 1]
    m = model("linear").fit(X, y)
    assert m.meta["ridge_fallback"]["rank"] == 3
    assert np.allclose(m.predict(X), y, atol=1e-4)
    with pytest.raises(DegenerateDesign):
        model("linear", on_singular="raise").fit(X, y)


# -- knn --------------------------------------------------------------------------------

def brute_neighbors(X, q, k):
    d2 = ((X - q) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(X)), d2))[:k]


def test_knn_example():
    X = np.arange(5.0)[:, None]
    m = model("knn", k=3).fit(X, np.arange(5.0))
    assert m.predict(np.array([[2.1]]))[0] == 2.0


def test_knn_self_match():
    X = rand(3, 300, 4)
    y = rand(4, 300)
    m = model("knn", k=1).fit(X, y)
    assert np.array_equal(m.predict(X), y)


@pytest.mark.parametrize("grid", [False, True])
def test_knn_matches_brute_force(grid):
    X = rand(5, 2000, 6)
    Q = rand(6, 1000, 6)
    if grid:  # integer lattice: many exact distance ties
        X, Q = np.round(X * 2), np.round(Q * 2)
    m = model("knn", k=5).fit(X, np.zeros(len(X)))
    nb = m.neighbors(Q)
    for j in range(len(Q)):
        assert nb[j].tolist() == brute_neighbors(X, Q[j], 5).tolist()


# -- trees ------------------------------------------------------------------------------

def test_gb_constant_target():
    X = rand(7, 200, 3)
    m = model("gb", n_estimators=20).fit(X, np.full(200, 4.25))
    assert np.all(m.predict(rand(8, 50, 3)) == 4.25)


def test_gb_stage_loss_non_increasing():
    for seed in range(20):
        X = rand(seed, 300, 4)
        y = np.sin(X[:, 0] * 2) + X[:, 1] ** 2 + 0.3 * rand(seed + 50, 300)
        lr = 0.05 + 0.95 * (seed / 19)
        for kind in ("gradient_boosting", "gradient_boosting_regularized"):
            loss = model(kind, seed=seed, n_estimators=40, learning_rate=lr, min_leaf=5).fit(X, y).stage_loss
            assert all(b <= a * (1 + 1e-12) for a, b in zip(loss, loss[1:]))


def test_staged_predict_matches_predict():
    X = rand(9, 200, 3)
    y = X[:, 0] * 3
    m = model("xgb", n_estimators=10).fit(X, y)
    *_, last = m.staged_predict(X)
    assert np.array_equal(last, m.predict(X))


def test_single_leaf_forest_predicts_mean():
    X = rand(10, 150, 3)
    y = rand(11, 150)
    m = model("rf", max_depth=0, bootstrap=False, n_estimators=7).fit(X, y)
    assert np.allclose(m.predict(rand(12, 20, 3)), y.mean(), rtol=1e-12, atol=1e-15)


def test_tree_fits_step():
    X = np.arange(100.0)[:, None]
    y = (X[:, 0] >= 50).astype(float)
    m = model("tree", min_leaf=1).fit(X, y)
    assert np.array_equal(m.predict(X), y)


@pytest.mark.parametrize("kind", ["random_forest", "extra_trees"])
def test_forest_independent_of_jobs(kind):
    X = rand(13, 400, 5)
    y = X[:, 0] + X[:, 1] * X[:, 2]
    a = model(kind, seed=99, n_estimators=12).fit(X, y).to_params()
    b = model(kind, seed=99, n_jobs=4, n_estimators=12).fit(X, y).to_params()
    assert a == b


def test_forest_seed_sensitivity():
    X = rand(14, 300, 4)
    y = X[:, 0]
    a = model("rf", seed=1, n_estimators=3).fit(X, y).predict(X)
    b = model("rf", seed=2, n_estimators=3).fit(X, y).predict(X)
    assert not np.array_equal(a, b)


def test_baseline_model_is_window_mean():
    m = model("baseline", window=4).fit(np.zeros((6, 1)), np.arange(6.0))
    assert m.predict(np.zeros((3, 1))).tolist() == [3.5] * 3


# -- specs ------------------------------------------------------------------------------

@pytest.mark.parametrize("kind,hp", [
    ("knn", {"k": 0}), ("gb", {"learning_rate": 0.0}), ("gb", {"learning_rate": 1.5}),
    ("rf", {"n_estimators": 0}), ("linear", {"k": 3}), ("tree", {"min_leaf": 0}),
])
def test_hyperparameter_validation(kind, hp):
    with pytest.raises(InvalidSpec):
        resolve_hyperparameters(canonical_kind(kind), hp)


def test_aliases_and_defaults():
    assert canonical_kind("xgb") == "gradient_boosting_regularized"
    assert canonical_kind("kn") == "knn"
    with pytest.raises(InvalidSpec):
        canonical_kind("svm")
    assert DEFAULTS["knn"]["k"] == 5
    assert DEFAULTS["random_forest"]["n_estimators"] == 100
    assert DEFAULTS["gradient_boosting"]["learning_rate"] == 0.1
    assert DEFAULTS["gradient_boosting_regularized"]["reg_lambda"] == 1.0


def test_array_encoding_round_trip():
    for a in (rand(15, 7, 3), np.arange(-5, 5, dtype=np.int64), np.zeros(0)):
        b = decode_array(encode_array(a))
        assert b.dtype == a.dtype and np.array_equal(a, b) and b.shape == a.shape
