import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_header
from ethmerge.errors import InsufficientProducers, SampleTooShort
from ethmerge.miners import (
    MinerProfile,
    analyze_window,
    categorize_counts,
    categorize_producers,
    era_window,
    producer_block_sample,
    randomness_metrics,
    sample_randomness,
    top_producers,
    unique_producer_count,
)
from ethmerge.synth import SynthChainConfig, gen_chain, producer_address


def headers_from_counts(counts: dict):
    out = []
    n = 0
    for p, c in counts.items():
        for _ in range(c):
            out.append(make_header(n, producer=p))
            n += 1
    return out


def test_unique_count():
    assert unique_producer_count([]) == 0
    addrs = [producer_address(i) for i in range(37)]
    hs = [make_header(i, producer=addrs[i % 37]) for i in range(1000)]
    assert unique_producer_count(hs) == 37


def test_categories():
    assert categorize_producers(headers_from_counts({"a": 5})).small == 1
    rep = categorize_counts({"a": 150_000, "b": 50_000, "c": 9_999})
    assert (rep.large, rep.medium, rep.small) == (1, 1, 1)
    rep = categorize_counts([10_000, 100_000, 100_001, 9_999])
    assert (rep.large, rep.medium, rep.small) == (1, 2, 1)


@given(st.lists(st.integers(1, 300_000), max_size=60))
def test_categories_partition(counts):
    rep = categorize_counts(counts)
    assert rep.total == len(counts)


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefghij"), st.integers(1, 30), max_size=10))
def test_categorize_headers_partition(counts):
    hs = headers_from_counts(counts)
    rep = categorize_producers(hs, thresholds=(5, 20))
    assert rep.total == unique_producer_count(hs)


def test_top_producers():
    hs = headers_from_counts({"A": 5, "B": 3, "C": 1})
    assert [p.producer for p in top_producers(hs, 2)] == ["A", "B"]
    with pytest.raises(InsufficientProducers):
        top_producers(hs, 10)
    tie = headers_from_counts({"B": 4, "A": 4})
    assert [p.producer for p in top_producers(tie, 1)] == ["A"]


def test_block_sample():
    p = MinerProfile("x", 100, tuple(range(1, 101)))
    assert producer_block_sample(p, 50, from_end=True) == list(range(51, 101))
    assert producer_block_sample(p, 50, from_end=False) == list(range(1, 51))
    short = MinerProfile("y", 3, (4, 9, 12))
    assert producer_block_sample(short, 50, True) == [4, 9, 12]


def test_randomness_hand_cases():
    r = sample_randomness(range(100, 150))
    assert (r.adjacency_rate, r.max_run_length, r.normalized_span) == (1.0, 50, 1.0)
    r = sample_randomness(range(100, 200, 2))
    assert (r.adjacency_rate, r.max_run_length) == (0.0, 1)
    assert r.normalized_span == pytest.approx(50 / 99)
    with pytest.raises(SampleTooShort):
        sample_randomness([5])


@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=80, unique=True), st.integers(-10**6, 10**9))
def test_randomness_shift_invariant(sample, c):
    a = sample_randomness(sample)
    b = sample_randomness([x + c for x in sample])
    assert a == b
    n = len(sample)
    assert 0.0 <= a.adjacency_rate <= 1.0 and 1 <= a.max_run_length <= n
    assert 0.0 < a.normalized_span <= 1.0


def test_randomness_report_means():
    rep = randomness_metrics({"a": list(range(10)), "b": list(range(0, 20, 2))})
    assert rep.mean_adjacency_rate == 0.5
    assert rep.mean_max_run_length == 5.5


def _mean_adjacency(stickiness, seed, n_blocks=5000):
    cfg = SynthChainConfig(n_blocks=n_blocks, producer_weights=[1.0] * 20, stickiness=stickiness, seed=seed)
    hs = gen_chain(cfg).headers
    tops = top_producers(hs, 10)
    return randomness_metrics({p.producer: producer_block_sample(p, 50, True) for p in tops}).mean_adjacency_rate


def test_stickiness_raises_adjacency():
    wins = sum(_mean_adjacency(0.3, s) > _mean_adjacency(0.0, s) for s in range(10))
    assert wins >= 9


def test_single_producer_fully_adjacent():
    hs = gen_chain(SynthChainConfig(n_blocks=200, producer_weights=[1.0], seed=3)).headers
    p = top_producers(hs, 1)[0]
    assert sample_randomness(p.block_numbers).adjacency_rate == 1.0


def test_era_windows():
    hs = [make_header(n) for n in range(90, 110)]
    pow_w = era_window(hs, 5, "pow", merge_block=100)
    pos_w = era_window(hs, 5, "pos", merge_block=100)
    assert [h.number for h in pow_w] == [95, 96, 97, 98, 99]
    assert [h.number for h in pos_w] == [100, 101, 102, 103, 104]


def test_analyze_window_shape():
    hs = gen_chain(SynthChainConfig(n_blocks=3000, producer_weights=[5, 3, 1, 1, 1], seed=1)).headers
    out = analyze_window(hs, k=3, sample=50)
    assert out["unique_producers"] == 5
    assert len(out["top_producers"]) == 3
    assert np.isfinite(out["randomness"]["mean_adjacency_rate"])
