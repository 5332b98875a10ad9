import json

import numpy as np
import pytest

from ethmerge.dataset import Dataset
from ethmerge.errors import (
    CorruptModelFile,
    EmptyHorizon,
    FeatureMismatch,
    InsufficientHistory,
    InvalidSpec,
    TargetMismatch,
    UncalibratedModel,
    VersionMismatch,
)
from ethmerge.predictor import (
    ModelSpec,
    baseline_estimate,
    load_model,
    model_from_json,
    model_to_json,
    predict,
    predict_min_fee_time,
    recommend_priority_fee,
    save_model,
    train,
)
from ethmerge.rng import SplitMix64
from ethmerge.synth import true_priority_quantile

GWEI = 10**9
SMALL = {
    "random_forest": {"n_estimators": 5}, "extra_trees": {"n_estimators": 5},
    "gradient_boosting": {"n_estimators": 10}, "gradient_boosting_regularized": {"n_estimators": 10},
}
ALL_KINDS = ["baseline", "linear", "knn", "tree", *SMALL]


def test_baseline_estimate_cases():
    assert baseline_estimate([7] * 1000, 1000) == 7
    assert baseline_estimate([7.0] * 1200, 1100) == 7.0
    assert baseline_estimate(list(range(1, 1501)), 1500) == 1000.5
    with pytest.raises(InsufficientHistory):
        baseline_estimate(list(range(999)), 999)
    with pytest.raises(InsufficientHistory):
        baseline_estimate([1] * 1000, 1001)


def test_baseline_exact_on_huge_ints():
    big = [10**30 + i for i in range(1000)]
    assert baseline_estimate(big, 1000) == (sum(big)) / 1000


def test_model_spec_validation():
    with pytest.raises(InvalidSpec):
        ModelSpec("gb", target="gas")
    with pytest.raises(InvalidSpec):
        ModelSpec("gb", seed=-1)
    with pytest.raises(InvalidSpec):
        ModelSpec("gb", {"depth": 3})
    assert ModelSpec("et").kind == "extra_trees"


def toy(n=300, seed=1, target="txn_fee", names=("a", "b", "c")):
    r = SplitMix64(seed)
    X = r.normal_array(n * len(names)).reshape(n, len(names))
    y = X[:, 0] - 2 * X[:, 1] + 0.05 * r.normal_array(n)
    return Dataset.from_arrays(X, y, list(names), target)


def test_train_requires_rows():
    with pytest.raises(InvalidSpec):
        train(ModelSpec("linear"), toy(n=9))
    with pytest.raises(InvalidSpec):
        train(ModelSpec("knn", {"k": 10}), toy(n=19))
    train(ModelSpec("knn", {"k": 10}), toy(n=20))


def test_predict_schema_guards():
    m = train(ModelSpec("linear"), toy())
    assert predict(m, []).shape == (0,)
    with pytest.raises(FeatureMismatch):
        predict(m, np.zeros((2, 3)), feature_names=["b", "a", "c"])
    with pytest.raises(FeatureMismatch):
        predict(m, [{"b": 0.0, "a": 0.0, "c": 0.0}])
    with pytest.raises(FeatureMismatch):
        predict(m, np.zeros((2, 4)))
    rows = [{"a": 1.0, "b": 0.0, "c": 0.0}]
    assert predict(m, rows)[0] == predict(m, [[1.0, 0.0, 0.0]])[0]


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_save_load_round_trip(kind, tmp_path):
    m = train(ModelSpec(kind, SMALL.get(kind, {}), seed=5), toy())
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    Q = SplitMix64(2).normal_array(3000).reshape(1000, 3)
    assert np.array_equal(predict(m, Q), predict(back, Q))
    assert model_to_json(back) == model_to_json(m)


def test_retrain_is_byte_identical():
    ds = toy()
    spec = ModelSpec("rf", {"n_estimators": 6}, seed=3)
    assert model_to_json(train(spec, ds)) == model_to_json(train(spec, ds, n_jobs=3))


def test_corrupt_and_future_files(tmp_path):
    text = model_to_json(train(ModelSpec("linear"), toy()))
    with pytest.raises(CorruptModelFile):
        model_from_json(text[: len(text) // 2])
    body = json.loads(text)
    body["metadata"]["n_train"] += 1
    with pytest.raises(CorruptModelFile):
        model_from_json(json.dumps(body))
    body = json.loads(text)
    body["format_version"] = 2
    with pytest.raises(VersionMismatch):
        model_from_json(json.dumps(body))
    (tmp_path / "bin").write_bytes(b"\xff\xfe\x00")
    with pytest.raises(CorruptModelFile):
        load_model(tmp_path / "bin")


def test_metadata_contents(fee_data):
    _, ds = fee_data
    m = train(ModelSpec("linear", target="txn_fee"), ds)
    md = m.metadata
    tr = ds.partition("train")
    assert md["feature_names"] == ds.feature_names
    assert md["n_train"] == ds.split_index
    assert md["train_block_range"] == [int(tr.block_numbers[0]), int(tr.block_numbers[-1])]
    assert md["fit_timestamp"] == int(tr.targets["txn_time"][-1])
    assert "calibration" not in md


# -- recommendation ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def tip_model(fee_data):
    _, ds = fee_data
    return train(ModelSpec("gb", target="priority_fee", seed=1), ds)


def test_recommend_median_is_raw_prediction(tip_model, fee_data):
    _, ds = fee_data
    for i in range(ds.split_index, len(ds), 301):
        x = ds.X[i]
        assert recommend_priority_fee(tip_model, x, 0.5) == predict(tip_model, [x])[0]


def test_recommend_monotone_in_q(tip_model, fee_data):
    _, ds = fee_data
    x = ds.X[-1]
    vals = [recommend_priority_fee(tip_model, x, q) for q in (0.5, 0.7, 0.9, 0.99)]
    assert vals == sorted(vals)


def test_recommend_guards(tip_model):
    base = train(ModelSpec("linear", target="base_fee"), toy(target="base_fee"))
    with pytest.raises(TargetMismatch):
        recommend_priority_fee(base, [0.0, 0.0, 0.0])
    nocal = train(ModelSpec("linear", target="priority_fee"), toy(target="priority_fee"))
    with pytest.raises(UncalibratedModel):
        recommend_priority_fee(nocal, [0.0, 0.0, 0.0])
    for q in (0.4, 1.0):
        with pytest.raises(InvalidSpec):
            recommend_priority_fee(tip_model, [0.0] * len(tip_model.feature_names), q)


def test_recommend_tracks_true_quantile(tip_model, fee_data):
    chain, ds = fee_data
    ctx = {t.tx_hash: (t.gas_used, c) for t, c in zip(chain.txs, chain.contexts)}
    ratios = []
    for i in range(ds.split_index, len(ds)):
        gas, c = ctx[ds.tx_hashes[i]]
        truth = true_priority_quantile(gas, c, 0.9) / GWEI
        ratios.append(recommend_priority_fee(tip_model, ds.X[i], 0.9) / truth)
    assert abs(np.median(ratios) - 1.0) <= 0.10


# -- best time --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def identity_model():
    x = np.linspace(-5, 5, 101)[:, None]
    return train(ModelSpec("linear"), Dataset.from_arrays(x, x[:, 0], ["f"], "txn_fee"))


def horizon(values, t0=1_700_000_000):
    return [(t0 + 12 * i, [v]) for i, v in enumerate(values)]


def test_besttime_cases(identity_model):
    h = horizon(range(10))
    assert predict_min_fee_time(identity_model, h) == h[0][0]
    h = horizon([abs(i - 7) + 0.5 for i in range(15)])
    assert predict_min_fee_time(identity_model, h) == h[7][0]
    h = horizon([2.0] * 6)
    assert predict_min_fee_time(identity_model, h) == h[0][0]


def test_besttime_guards(identity_model):
    with pytest.raises(EmptyHorizon):
        predict_min_fee_time(identity_model, [])
    with pytest.raises(InvalidSpec):
        predict_min_fee_time(identity_model, [(5, [1.0]), (5, [2.0])])
    tip = train(ModelSpec("linear", target="priority_fee"), toy(target="priority_fee"))
    with pytest.raises(TargetMismatch):
        predict_min_fee_time(tip, horizon([1.0]))
