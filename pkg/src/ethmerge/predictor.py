"""Training, prediction, fee recommendation and model files."""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import TARGETS, Dataset
from .errors import (
    CorruptModelFile,
    EmptyHorizon,
    FeatureMismatch,
    InsufficientHistory,
    InvalidSpec,
    TargetMismatch,
    UncalibratedModel,
    VersionMismatch,
)
from .models import KINDS, Model, canonical_kind, make_model, resolve_hyperparameters

FORMAT_VERSION = 1
BASELINE_WINDOW = 1000
CALIBRATION_FEATURE = "block_gas_ratio"
CALIBRATION_QUANTILES = tuple(round(0.5 + 0.01 * i, 2) for i in range(50))  # 0.50 .. 0.99


@dataclass
class ModelSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    target: str = "txn_fee"

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        if self.target not in TARGETS:
            raise InvalidSpec(f"unknown target {self.target!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        self.seed = int(self.seed)
        self.hyperparameters = resolve_hyperparameters(self.kind, self.hyperparameters)

    def to_json(self) -> dict:
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters),
                "seed": self.seed, "target": self.target}


@dataclass
class TrainedModel:
    spec: ModelSpec
    model: Model
    metadata: dict

    @property
    def feature_names(self) -> list[str]:
        return self.metadata["feature_names"]


def baseline_estimate(history: Sequence[float], n: int, window: int = BASELINE_WINDOW) -> float:
    """Mean of the ``window`` fees immediately before position ``n`` (0-based).

    Integer histories (wei) are summed exactly and divided once; float
    histories use a correctly rounded ``math.fsum``.
    """
    if n < window:
        raise InsufficientHistory(f"{n} prior fees, need {window}")
    if n > len(history):
        raise InsufficientHistory(f"position {n} beyond history of {len(history)}")
    past = history[n - window:n]
    if all(isinstance(v, int) for v in past):
        return sum(past) / window
    return math.fsum(past) / window


def _congestion_column(names: Sequence[str]) -> int | None:
    try:
        return list(names).index(CALIBRATION_FEATURE)
    except ValueError:
        return None


def calibrate(pred: np.ndarray, actual: np.ndarray, congestion: np.ndarray) -> dict:
    """Per congestion decile, uplift factors ``Q_q(actual/pred) / Q_0.5(actual/pred)``."""
    edges = np.percentile(congestion, np.arange(10, 100, 10), method="linear")
    bucket = np.searchsorted(edges, congestion, side="right")
    ok = pred > 0
    ratio = np.where(ok, actual / np.where(ok, pred, 1.0), np.nan)
    qs = np.array(CALIBRATION_QUANTILES)
    all_r = ratio[ok]
    factors = []
    counts = []
    for b in range(10):
        r = ratio[(bucket == b) & ok]
        if r.size < 10:  # too few rows: borrow the pooled distribution
            r = all_r
        qv = np.percentile(r, qs * 100.0, method="linear")
        factors.append((qv / qv[0]).tolist())
        counts.append(int(r.size))
    return {"feature": CALIBRATION_FEATURE, "edges": edges.tolist(), "quantiles": qs.tolist(),
            "factors": factors, "rows": counts}


def train(spec: ModelSpec, dataset: Dataset, n_jobs: int = 1) -> TrainedModel:
    """Fit ``spec`` on the training partition of ``dataset``."""
    train_part = dataset.partition("train")
    X = train_part.X
    y = train_part.target(spec.target)
    k = spec.hyperparameters.get("k", 0)
    if X.shape[0] < max(2 * k, 10):
        raise InvalidSpec(f"{X.shape[0]} training rows, need at least {max(2 * k, 10)}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise InvalidSpec("training data contains NaN or infinite values")
    model = make_model(spec.kind, spec.hyperparameters, spec.seed, n_jobs).fit(X, y)
    cfg = dataset.config
    meta = {
        "feature_names": list(dataset.feature_names),
        "feature_means": list(cfg.means) if cfg else [],
        "feature_stds": list(cfg.stds) if cfg else [],
        "n_train": int(X.shape[0]),
        "train_block_range": ([int(train_part.block_numbers[0]), int(train_part.block_numbers[-1])]
                              if train_part.block_numbers is not None and len(train_part) else None),
        # taken from the data, not the clock, so model files are reproducible
        "fit_timestamp": (int(train_part.targets["txn_time"][-1])
                          if "txn_time" in train_part.targets and len(train_part) else None),
        **model.meta,
    }
    if spec.target == "priority_fee":
        col = _congestion_column(dataset.feature_names)
        if col is not None:
            meta["calibration"] = calibrate(model.predict(X), y, X[:, col])
    return TrainedModel(spec, model, meta)


def _as_matrix(model: TrainedModel, rows, feature_names: Sequence[str] | None) -> np.ndarray:
    names = model.feature_names
    if feature_names is not None and list(feature_names) != names:
        raise FeatureMismatch(f"expected features {names}, got {list(feature_names)}")
    if isinstance(rows, Mapping):
        rows = [rows]
    if len(rows) and isinstance(rows[0], Mapping):
        bad = [r for r in rows if list(r.keys()) != names]
        if bad:
            raise FeatureMismatch(f"expected features {names}, got {list(bad[0].keys())}")
        rows = [[r[n] for n in names] for r in rows]
    X = np.asarray(rows, dtype=np.float64)
    if X.size == 0:
        return np.zeros((0, len(names)))
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(names):
        raise FeatureMismatch(f"expected {len(names)} features, got {X.shape[1]}")
    return X


def predict(model: TrainedModel, rows, feature_names: Sequence[str] | None = None) -> np.ndarray:
    """Predictions for standardized feature rows in training order.

    ``rows`` is a matrix, a list of vectors or a list of name-to-value maps.
    """
    X = _as_matrix(model, rows, feature_names)
    if X.shape[0] == 0:
        return np.zeros(0)
    return model.model.predict(X)


def standardize(model: TrainedModel, raw: Mapping[str, float]) -> list[float]:
    """Standardize raw feature values with the model's stored statistics."""
    names = model.feature_names
    missing = [n for n in names if n not in raw]
    if missing:
        raise FeatureMismatch(f"missing features {missing}")
    mu = model.metadata["feature_means"]
    sd = model.metadata["feature_stds"]
    return [(float(raw[n]) - mu[i]) / sd[i] for i, n in enumerate(names)]


def uplift_factor(model: TrainedModel, congestion: float, q: float) -> float:
    cal = model.metadata.get("calibration")
    if not cal:
        raise UncalibratedModel("model carries no calibration table")
    b = int(np.searchsorted(np.asarray(cal["edges"]), congestion, side="right"))
    return float(np.interp(q, cal["quantiles"], cal["factors"][b]))


def recommend_priority_fee(model: TrainedModel, context, q: float = 0.9) -> float:
    """Predicted priority fee scaled by the congestion-bucket uplift for quantile ``q``."""
    if model.spec.target != "priority_fee":
        raise TargetMismatch(f"model predicts {model.spec.target}, not priority_fee")
    if not 0.5 <= q < 1.0:
        raise InvalidSpec("q must be in [0.5, 1)")
    if not model.metadata.get("calibration"):
        raise UncalibratedModel("model carries no calibration table")
    x = _as_matrix(model, context if isinstance(context, Mapping) else [context], None)
    pred = float(model.model.predict(x)[0])
    col = _congestion_column(model.feature_names)
    return pred * uplift_factor(model, float(x[0, col]), q)


def predict_min_fee_time(model: TrainedModel, forecast_contexts: Sequence[tuple[int, object]]) -> int:
    """Timestamp with the lowest predicted transaction fee; ties go to the earliest."""
    if model.spec.target != "txn_fee":
        raise TargetMismatch(f"model predicts {model.spec.target}, not txn_fee")
    if not forecast_contexts:
        raise EmptyHorizon("forecast horizon is empty")
    ts = [int(t) for t, _ in forecast_contexts]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise InvalidSpec("horizon timestamps must be strictly increasing")
    pred = predict(model, [r for _, r in forecast_contexts])
    return ts[int(np.argmin(pred))]


# -- model files -------------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def model_to_json(model: TrainedModel) -> str:
    body = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_json(),
        "metadata": model.metadata,
        "parameters": model.model.to_params(),
    }
    body["checksum"] = hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()
    return _canonical(body) + "\n"


def save_model(model: TrainedModel, path: str | os.PathLike) -> None:
    Path(path).write_text(model_to_json(model), encoding="utf-8")


def model_from_json(text: str) -> TrainedModel:
    try:
        body = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptModelFile(f"model file is not valid JSON: {e}") from None
    if not isinstance(body, dict) or "format_version" not in body:
        raise CorruptModelFile("model file lacks format_version")
    if body["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(f"model format {body['format_version']}, this build reads {FORMAT_VERSION}")
    checksum = body.pop("checksum", None)
    if checksum != hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest():
        raise CorruptModelFile("checksum mismatch")
    try:
        s = body["spec"]
        spec = ModelSpec(s["kind"], s["hyperparameters"], s["seed"], s["target"])
        m = make_model(spec.kind, spec.hyperparameters, spec.seed)
        m.load_params(body["parameters"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptModelFile(f"malformed model parameters: {e}") from None
    return TrainedModel(spec, m, body["metadata"])


def load_model(path: str | os.PathLike) -> TrainedModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorruptModelFile(str(e)) from None
    return model_from_json(text)


__all__ = [
    "KINDS", "ModelSpec", "TrainedModel", "baseline_estimate", "train", "predict",
    "recommend_priority_fee", "predict_min_fee_time", "save_model", "load_model",
]
