"""Compare the compiled and numpy tree kernels on random regression data.

    python benchmarks/bench_kernels.py --rows 4000 --features 14 --repeat 5
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from ethmerge import kernels
from ethmerge.rng import SplitMix64


def make_data(n: int, f: int, seed: int):
    rng = SplitMix64(seed)
    X = rng.normal_array(n * f).reshape(n, f)
    y = X[:, 0] * 2.0 + np.sin(X[:, 1] * 3.0) + 0.1 * rng.normal_array(n)
    return np.ascontiguousarray(X), y


def time_backend(mod, X, y, repeat, random_splits, max_features):
    idx = np.arange(X.shape[0], dtype=np.int64)
    ones = np.ones_like(y)
    best = float("inf")
    tree = None
    for r in range(repeat):
        t0 = time.perf_counter()
        tree = mod.build_tree(X, y, ones, idx, 8, 20, max_features, 0.0, random_splits, r)
        best = min(best, time.perf_counter() - t0)
    t0 = time.perf_counter()
    pred = mod.predict_tree(X, *tree[:5])
    predict_s = time.perf_counter() - t0
    return best, predict_s, tree, pred


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4000)
    ap.add_argument("--features", type=int, default=14)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    X, y = make_data(args.rows, args.features, args.seed)
    backends = [("python", kernels.python)]
    if kernels.compiled is not None:
        backends.append(("cython", kernels.compiled))
    results = {}
    for mode, random_splits, mf in (("best", False, args.features), ("random", True, args.features),
                                    ("subsample", False, max(1, args.features // 3))):
        row = {}
        trees = {}
        for name, mod in backends:
            fit_s, pred_s, tree, pred = time_backend(mod, X, y, args.repeat, random_splits, mf)
            row[name] = {"fit_ms": round(fit_s * 1e3, 3), "predict_ms": round(pred_s * 1e3, 3),
                         "nodes": int(tree[0].size)}
            trees[name] = (tree, pred)
        if len(trees) == 2:
            (ta, pa), (tb, pb) = trees.values()
            row["identical"] = all(np.array_equal(a, b) for a, b in zip(ta, tb)) and np.array_equal(pa, pb)
            row["speedup"] = round(row["python"]["fit_ms"] / row["cython"]["fit_ms"], 2)
        results[mode] = row
    print(json.dumps({"rows": args.rows, "features": args.features, "results": results}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
