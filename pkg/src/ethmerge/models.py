"""Regression models over standardized feature matrices.

Every model exposes ``fit(X, y)``, ``predict(X)`` and a parameter dict that
serializes losslessly (float arrays are stored as little-endian float64
bytes, base64 encoded).  Tree models share one kernel (see
:mod:`ethmerge.kernels`) that grows least-squares trees from gradient and
hessian statistics.
"""
from __future__ import annotations

import base64
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateDesign, InvalidSpec
from .rng import MASK64, SplitMix64, mix64

KINDS = ("baseline", "linear", "knn", "tree", "random_forest", "extra_trees",
         "gradient_boosting", "gradient_boosting_regularized")

ALIASES = {
    "lr": "linear", "kn": "knn", "dt": "tree", "rf": "random_forest", "et": "extra_trees",
    "gb": "gradient_boosting", "xgb": "gradient_boosting_regularized",
}

_TREE = {"max_depth": 8, "min_leaf": 20}
_FOREST = {**_TREE, "n_estimators": 100, "max_features": 1.0 / 3.0}
_BOOST = {**_TREE, "n_estimators": 200, "learning_rate": 0.1}

DEFAULTS: dict[str, dict] = {
    "baseline": {"window": 1000},
    "linear": {"on_singular": "ridge", "ridge_lambda": 1e-6},
    "knn": {"k": 5},
    "tree": dict(_TREE),
    "random_forest": {**_FOREST, "bootstrap": True},
    # randomized thresholds already decorrelate the trees; screening all
    # features per node is the usual choice for regression
    "extra_trees": {**_FOREST, "bootstrap": False, "max_features": 1.0},
    "gradient_boosting": {**_BOOST, "reg_lambda": 0.0},
    "gradient_boosting_regularized": {**_BOOST, "reg_lambda": 1.0},
}


def canonical_kind(kind: str) -> str:
    k = ALIASES.get(kind, kind)
    if k not in KINDS:
        raise InvalidSpec(f"unknown model kind {kind!r}")
    return k


def resolve_hyperparameters(kind: str, overrides: dict | None) -> dict:
    """Defaults for ``kind`` updated with ``overrides``, validated."""
    hp = dict(DEFAULTS[kind])
    for key, v in (overrides or {}).items():
        if key not in hp:
            raise InvalidSpec(f"{kind} has no hyperparameter {key!r}")
        hp[key] = type(hp[key])(v) if not isinstance(hp[key], bool) else bool(v)
    if "k" in hp and hp["k"] < 1:
        raise InvalidSpec("k must be >= 1")
    if "window" in hp and hp["window"] < 1:
        raise InvalidSpec("window must be >= 1")
    if "n_estimators" in hp and hp["n_estimators"] < 1:
        raise InvalidSpec("n_estimators must be >= 1")
    if "learning_rate" in hp and not 0.0 < hp["learning_rate"] <= 1.0:
        raise InvalidSpec("learning_rate must be in (0, 1]")
    if "max_depth" in hp and hp["max_depth"] < 0:
        raise InvalidSpec("max_depth must be >= 0")
    if "min_leaf" in hp and hp["min_leaf"] < 1:
        raise InvalidSpec("min_leaf must be >= 1")
    if "max_features" in hp and not 0.0 < hp["max_features"] <= 1.0:
        raise InvalidSpec("max_features must be in (0, 1]")
    if "reg_lambda" in hp and hp["reg_lambda"] < 0:
        raise InvalidSpec("reg_lambda must be >= 0")
    if "on_singular" in hp and hp["on_singular"] not in ("ridge", "raise"):
        raise InvalidSpec("on_singular must be 'ridge' or 'raise'")
    return hp


# -- array codec -------------------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    dtype = "f8" if a.dtype.kind == "f" else "i8"
    data = a.astype("<" + dtype).tobytes()
    return {"dtype": dtype, "shape": list(a.shape), "b64": base64.b64encode(data).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["b64"].encode("ascii"), validate=True)
    a = np.frombuffer(raw, dtype="<" + d["dtype"]).reshape(d["shape"])
    return a.astype(np.float64 if d["dtype"] == "f8" else np.int64)


# -- trees ----------------------------------------------------------------------------

@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return kernels.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def to_params(self) -> dict:
        return {k: encode_array(getattr(self, k))
                for k in ("feature", "threshold", "left", "right", "value", "n_samples")}

    @classmethod
    def from_params(cls, d: dict) -> "Tree":
        return cls(**{k: decode_array(v) for k, v in d.items()})


def grow(X, g, h, idx, hp: dict, seed: int, max_features: int, random_splits: bool,
         reg_lambda: float = 0.0, presorted=None) -> Tree:
    return Tree(*kernels.build_tree(X, g, h, idx, hp["max_depth"], hp["min_leaf"], max_features,
                                    reg_lambda, random_splits, seed & MASK64, presorted))


def _n_features(frac: float, n: int) -> int:
    return min(n, max(1, int(round(frac * n))))


# -- models -----------------------------------------------------------------------------

class Model:
    kind = ""

    def __init__(self, hp: dict, seed: int = 0, n_jobs: int = 1):
        self.hp = hp
        self.seed = int(seed)
        self.n_jobs = max(1, int(n_jobs))
        self.meta: dict = {}

    def fit(self, X: np.ndarray, y: np.ndarray) -> "Model":
        raise NotImplementedError

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_params(self) -> dict:
        raise NotImplementedError

    def load_params(self, d: dict) -> None:
        raise NotImplementedError


class BaselineModel(Model):
    """Constant: mean of the last ``window`` training targets."""
    kind = "baseline"

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        w = min(self.hp["window"], y.size)
        self.constant = float(np.cumsum(y[-w:])[-1] / w)
        return self

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.constant)

    def to_params(self):
        return {"constant": self.constant}

    def load_params(self, d):
        self.constant = float(d["constant"])


class LinearModel(Model):
    """Ordinary least squares with an intercept, via SVD-based ``lstsq``."""
    kind = "linear"

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        A = np.column_stack([X, np.ones(X.shape[0])])
        coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < A.shape[1]:
            if self.hp["on_singular"] == "raise":
                raise DegenerateDesign(f"design matrix rank {rank} < {A.shape[1]}")
            lam = self.hp["ridge_lambda"]
            # ridge on the slopes only; the intercept stays unpenalized
            P = np.eye(A.shape[1]) * lam
            P[-1, -1] = 0.0
            coef = np.linalg.solve(A.T @ A + P, A.T @ y)
            self.meta["ridge_fallback"] = {"lambda": lam, "rank": int(rank), "columns": int(A.shape[1])}
        self.coef = coef[:-1].copy()
        self.intercept = float(coef[-1])
        return self

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def to_params(self):
        return {"coef": encode_array(self.coef), "intercept": self.intercept}

    def load_params(self, d):
        self.coef = decode_array(d["coef"])
        self.intercept = float(d["intercept"])


class KNNModel(Model):
    """Exact k nearest neighbours, Euclidean; ties go to the earlier row.

    Candidates are screened with the expanded form ``|q|² + |x|² - 2 q·x``
    (a matrix product), padded by a rounding margin, then ranked by the
    directly computed ``sum((q - x)²)``.  The result equals exhaustive search.
    """
    kind = "knn"
    chunk = 256

    def fit(self, X, y):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64).copy()
        return self

    def neighbors(self, Q: np.ndarray) -> np.ndarray:
        Q = np.asarray(Q, dtype=np.float64)
        X = self.X
        n = X.shape[0]
        k = min(self.hp["k"], n)
        xx = np.einsum("ij,ij->i", X, X)
        out = np.empty((Q.shape[0], k), dtype=np.int64)
        for s in range(0, Q.shape[0], self.chunk):
            q = Q[s:s + self.chunk]
            qq = np.einsum("ij,ij->i", q, q)
            approx = qq[:, None] + xx[None, :] - 2.0 * (q @ X.T)
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            # generous bound on the expanded form's cancellation error
            margin = 1e-9 * (qq[:, None] + xx[None, :] + 1.0)
            for j in range(q.shape[0]):
                cand = np.flatnonzero(approx[j] <= kth[j] + margin[j])
                diff = X[cand] - q[j]
                d2 = np.einsum("ij,ij->i", diff, diff)
                order = np.lexsort((cand, d2))[:k]
                out[s + j] = cand[order]
        return out

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            return np.zeros(0)
        nb = self.neighbors(X)
        return self.y[nb].sum(axis=1) / nb.shape[1]

    def to_params(self):
        return {"X": encode_array(self.X), "y": encode_array(self.y)}

    def load_params(self, d):
        self.X = decode_array(d["X"])
        self.y = decode_array(d["y"])


class TreeModel(Model):
    """Single least-squares regression tree over all features."""
    kind = "tree"

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        idx = np.arange(X.shape[0], dtype=np.int64)
        self.tree = grow(X, y, np.ones_like(y), idx, self.hp, self.seed, X.shape[1], False)
        return self

    def predict(self, X):
        return self.tree.predict(X)

    def to_params(self):
        return {"tree": self.tree.to_params()}

    def load_params(self, d):
        self.tree = Tree.from_params(d["tree"])


class ForestModel(Model):
    """Averaged trees; per-tree seeds are ``seed ^ index``.

    ``random_forest`` bootstraps rows and optimizes thresholds;
    ``extra_trees`` uses all rows and draws thresholds uniformly.
    Both sample ``max_features`` candidate features per node.
    """

    def __init__(self, hp, seed=0, n_jobs=1, kind="random_forest"):
        super().__init__(hp, seed, n_jobs)
        self.kind = kind

    def _one(self, X, y, ones, i):
        stream = SplitMix64(mix64((self.seed ^ i) & MASK64))
        n = X.shape[0]
        if self.hp["bootstrap"]:
            idx = (stream.u64_array(n) % np.uint64(n)).astype(np.int64)
        else:
            idx = np.arange(n, dtype=np.int64)
        mf = _n_features(self.hp["max_features"], X.shape[1])
        return grow(X, y, ones, idx, self.hp, stream.next_u64(), mf, self.kind == "extra_trees")

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ones = np.ones_like(y)
        n = self.hp["n_estimators"]
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                self.trees = list(ex.map(lambda i: self._one(X, y, ones, i), range(n)))
        else:
            self.trees = [self._one(X, y, ones, i) for i in range(n)]
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def to_params(self):
        return {"trees": [t.to_params() for t in self.trees]}

    def load_params(self, d):
        self.trees = [Tree.from_params(t) for t in d["trees"]]


class BoostingModel(Model):
    """Least-squares gradient boosting.

    ``F_0`` is the target mean; stage ``m`` fits a tree to the residuals
    (gradient ``y - F``, unit hessian) and adds ``learning_rate`` times its
    prediction.  With ``reg_lambda > 0`` leaves are ``sum(g) / (sum(h) + λ)``
    and split gains are penalized accordingly.
    """

    def __init__(self, hp, seed=0, n_jobs=1, kind="gradient_boosting"):
        super().__init__(hp, seed, n_jobs)
        self.kind = kind

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        idx = np.arange(n, dtype=np.int64)
        ones = np.ones(n)
        pre = kernels.presort(X, idx)
        lr = self.hp["learning_rate"]
        self.init = float(np.sum(y) / n)
        F = np.full(n, self.init)
        self.trees = []
        self.stage_loss = []
        for m in range(self.hp["n_estimators"]):
            r = y - F
            t = grow(X, r, ones, idx, self.hp, self.seed ^ m, X.shape[1], False,
                     self.hp["reg_lambda"], presorted=pre)
            F = F + lr * t.predict(X)
            self.trees.append(t)
            e = y - F
            self.stage_loss.append(float(np.dot(e, e) / n))
        self.meta["train_mse_per_stage"] = self.stage_loss
        return self

    def staged_predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        F = np.full(X.shape[0], self.init)
        for t in self.trees:
            F = F + self.hp["learning_rate"] * t.predict(X)
            yield F

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        F = np.full(X.shape[0], self.init)
        lr = self.hp["learning_rate"]
        for t in self.trees:
            F = F + lr * t.predict(X)
        return F

    def to_params(self):
        return {"init": self.init, "trees": [t.to_params() for t in self.trees]}

    def load_params(self, d):
        self.init = float(d["init"])
        self.trees = [Tree.from_params(t) for t in d["trees"]]


def make_model(kind: str, hp: dict, seed: int = 0, n_jobs: int = 1) -> Model:
    kind = canonical_kind(kind)
    if kind == "baseline":
        return BaselineModel(hp, seed, n_jobs)
    if kind == "linear":
        return LinearModel(hp, seed, n_jobs)
    if kind == "knn":
        return KNNModel(hp, seed, n_jobs)
    if kind == "tree":
        return TreeModel(hp, seed, n_jobs)
    if kind in ("random_forest", "extra_trees"):
        return ForestModel(hp, seed, n_jobs, kind=kind)
    return BoostingModel(hp, seed, n_jobs, kind=kind)
