import os
import subprocess
import sys

import numpy as np
import pytest

from ethmerge import kernels
from ethmerge.rng import SplitMix64

needs_compiled = pytest.mark.skipif(kernels.compiled is None, reason="compiled kernels not built")


def data(seed, n=600, f=5):
    r = SplitMix64(seed)
    X = r.normal_array(n * f).reshape(n, f)
    X[:, -1] = np.round(X[:, -1])  # a column with many ties
    y = X[:, 0] * 2 + np.sin(3 * X[:, 1]) + 0.1 * r.normal_array(n)
    return np.ascontiguousarray(X), y


@needs_compiled
@pytest.mark.parametrize("random_splits", [False, True])
@pytest.mark.parametrize("max_features", [1, 2, 5])
@pytest.mark.parametrize("reg_lambda", [0.0, 1.0])
def test_backends_identical(random_splits, max_features, reg_lambda):
    X, y = data(max_features + 10 * random_splits)
    h = np.ones_like(y)
    n = len(y)
    # bootstrap-style index with repeats
    idx = (SplitMix64(3).u64_array(n) % np.uint64(n)).astype(np.int64)
    args = (X, y, h, idx, 6, 5, max_features, reg_lambda, random_splits, 12345)
    a = kernels.python.build_tree(*args)
    b = kernels.compiled.build_tree(*args)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    pa = kernels.python.predict_tree(X, *a[:5])
    pb = kernels.compiled.predict_tree(X, *b[:5])
    assert np.array_equal(pa, pb)


@needs_compiled
def test_presorted_path_identical():
    X, y = data(4)
    idx = np.arange(len(y), dtype=np.int64)
    h = np.ones_like(y)
    for mod in (kernels.python, kernels.compiled):
        pre = mod.presort(X, idx)
        plain = mod.build_tree(X, y, h, idx, 5, 10, 5, 0.0, False, 0)
        fast = mod.build_tree(X, y, h, idx, 5, 10, 5, 0.0, False, 0, pre)
        assert all(np.array_equal(u, v) for u, v in zip(plain, fast))


def test_backend_lookup():
    assert kernels.get_backend("python") is kernels.python
    assert kernels.get_backend() is kernels.active
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_env_selects_fallback():
    env = dict(os.environ, ETHMERGE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from ethmerge import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
