import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethmerge.errors import LengthMismatch
from ethmerge.metrics import evaluate
from ethmerge.rng import SplitMix64


def test_hand_cases():
    r = evaluate([1, 2, 3], [1, 2, 3])
    assert (r.rmse, r.mae, r.r2) == (0.0, 0.0, 1.0)
    r = evaluate([1, 2, 3], [2, 2, 2])
    assert abs(r.mae - 2 / 3) <= 1e-12
    assert abs(r.rmse - math.sqrt(2 / 3)) <= 1e-12
    assert abs(r.r2 - 0.0) <= 1e-12
    assert abs(evaluate([1, 2, 3], [3, 3, 3]).r2 + 1.5) <= 1e-12


def test_errors_and_zero_variance():
    with pytest.raises(LengthMismatch):
        evaluate([1, 2], [1])
    with pytest.raises(LengthMismatch):
        evaluate([], [])
    r = evaluate([5, 5, 5], [4, 5, 6])
    assert r.r2 is None and r.mae == pytest.approx(2 / 3)


def test_rmse_ge_mae_fuzz():
    rng = SplitMix64(1)
    for i in range(10_000):
        n = 1 + i % 50
        a = rng.normal_array(n) * 10 ** (i % 7)
        p = rng.normal_array(n) * 10 ** (i % 5)
        r = evaluate(a, p)
        assert r.rmse >= r.mae >= 0


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=2, max_size=50),
       st.randoms(use_true_random=False))
def test_permutation_invariance(pairs, rnd):
    a, p = map(np.array, zip(*pairs))
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    r1, r2 = evaluate(a, p), evaluate(a[perm], p[perm])
    assert r1.mae == pytest.approx(r2.mae, rel=1e-12, abs=1e-9)
    assert r1.rmse == pytest.approx(r2.rmse, rel=1e-12, abs=1e-9)
    if r1.r2 is not None and r2.r2 is not None:
        assert r1.r2 == pytest.approx(r2.r2, rel=1e-9, abs=1e-9)


@given(st.floats(1e-3, 1e3))
def test_scale_relation(c):
    a = np.array([1.0, 4.0, 2.0, 8.0])
    p = np.array([1.5, 3.0, 2.5, 7.0])
    r1, r2 = evaluate(a, p), evaluate(a * c, p * c)
    assert r2.mae == pytest.approx(c * r1.mae, rel=1e-12)
    assert r2.rmse == pytest.approx(c * r1.rmse, rel=1e-12)
    assert r2.r2 == pytest.approx(r1.r2, rel=1e-12)
