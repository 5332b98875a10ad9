"""Block-producer concentration and selection-randomness analysis.

Producers are bucketed by block count: small below 10 000, medium from
10 000 to 100 000 inclusive, large above 100 000.  Clustering of a producer's
blocks is measured by three statistics over a sorted sample of block numbers:

* ``adjacency_rate``: fraction of neighbouring pairs that are consecutive numbers
* ``max_run_length``: longest run of consecutive numbers
* ``normalized_span``: ``n / (max - min + 1)``, 1.0 for a contiguous sample
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientProducers, InvalidRange, SampleTooShort
from .ingest import BlockHeader

MERGE_BLOCK = 15_537_394
DEFAULT_THRESHOLDS = (10_000, 100_000)


@dataclass(frozen=True)
class MinerProfile:
    producer: str
    blocks_produced: int
    block_numbers: tuple[int, ...]


@dataclass
class CategoryReport:
    window_size: int
    large: int
    medium: int
    small: int
    thresholds: tuple[int, int] = DEFAULT_THRESHOLDS

    @property
    def total(self) -> int:
        return self.large + self.medium + self.small

    def to_json(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        d["unique_producers"] = self.total
        return d


@dataclass
class ProducerRandomness:
    adjacency_rate: float
    max_run_length: int
    normalized_span: float
    n: int


@dataclass
class RandomnessReport:
    per_producer: dict[str, ProducerRandomness] = field(default_factory=dict)
    mean_adjacency_rate: float = 0.0
    mean_max_run_length: float = 0.0
    mean_normalized_span: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def _producers(headers: Iterable) -> Iterable[str]:
    for h in headers:
        yield h.producer if isinstance(h, BlockHeader) else h


def unique_producer_count(headers: Iterable[BlockHeader]) -> int:
    return len(set(_producers(headers)))


def producer_counts(headers: Iterable[BlockHeader]) -> Counter:
    return Counter(_producers(headers))


def categorize_counts(counts: Mapping[str, int] | Iterable[int], window_size: int = 0,
                      thresholds: tuple[int, int] = DEFAULT_THRESHOLDS) -> CategoryReport:
    lo, hi = thresholds
    values = counts.values() if isinstance(counts, Mapping) else counts
    large = medium = small = 0
    for c in values:
        if c > hi:
            large += 1
        elif c >= lo:
            medium += 1
        else:
            small += 1
    return CategoryReport(window_size, large, medium, small, tuple(thresholds))


def categorize_producers(headers: Sequence[BlockHeader],
                         thresholds: tuple[int, int] = DEFAULT_THRESHOLDS) -> CategoryReport:
    return categorize_counts(producer_counts(headers), len(headers), thresholds)


def miner_profiles(headers: Iterable[BlockHeader]) -> dict[str, MinerProfile]:
    blocks: dict[str, list[int]] = {}
    for h in headers:
        blocks.setdefault(h.producer, []).append(h.number)
    return {p: MinerProfile(p, len(b), tuple(sorted(b))) for p, b in blocks.items()}


def top_producers(headers: Iterable[BlockHeader], k: int = 10) -> list[MinerProfile]:
    """The ``k`` most prolific producers; equal counts are ordered by address."""
    profiles = miner_profiles(headers)
    if len(profiles) < k:
        raise InsufficientProducers(f"{len(profiles)} distinct producers, need {k}")
    ranked = sorted(profiles.values(), key=lambda p: (-p.blocks_produced, p.producer))
    return ranked[:k]


def producer_block_sample(profile: MinerProfile, n: int = 50, from_end: bool = True) -> list[int]:
    blocks = profile.block_numbers
    return list(blocks[-n:] if from_end else blocks[:n])


def sample_randomness(sample: Sequence[int]) -> ProducerRandomness:
    x = np.sort(np.asarray(sample, dtype=np.int64))
    n = x.size
    if n < 2:
        raise SampleTooShort(f"sample of {n} blocks, need at least 2")
    adjacent = np.diff(x) == 1
    run = best = 1
    for a in adjacent.tolist():
        run = run + 1 if a else 1
        best = max(best, run)
    return ProducerRandomness(
        adjacency_rate=float(adjacent.sum()) / (n - 1),
        max_run_length=best,
        normalized_span=n / float(x[-1] - x[0] + 1),
        n=int(n),
    )


def randomness_metrics(samples: Mapping[str, Sequence[int]] | Sequence[Sequence[int]]) -> RandomnessReport:
    """Per-producer clustering statistics and their window means."""
    items = samples.items() if isinstance(samples, Mapping) else ((str(i), s) for i, s in enumerate(samples))
    per = {p: sample_randomness(s) for p, s in items}
    if not per:
        return RandomnessReport()
    m = len(per)
    return RandomnessReport(
        per_producer=per,
        mean_adjacency_rate=sum(r.adjacency_rate for r in per.values()) / m,
        mean_max_run_length=sum(r.max_run_length for r in per.values()) / m,
        mean_normalized_span=sum(r.normalized_span for r in per.values()) / m,
    )


def era_window(headers: Sequence[BlockHeader], size: int, era: str,
               merge_block: int = MERGE_BLOCK) -> list[BlockHeader]:
    """The last ``size`` PoW blocks before the merge or the first ``size`` PoS blocks."""
    if size < 1:
        raise InvalidRange("window size must be >= 1")
    ordered = sorted(headers, key=lambda h: h.number)
    if era == "pow":
        return [h for h in ordered if h.number < merge_block][-size:]
    if era == "pos":
        return [h for h in ordered if h.number >= merge_block][:size]
    raise InvalidRange(f"unknown era {era!r}")


def analyze_window(headers: Sequence[BlockHeader], k: int = 10, sample: int = 50,
                   from_end: bool = True, thresholds: tuple[int, int] = DEFAULT_THRESHOLDS) -> dict:
    """Counts, categories, top producers and randomness for one window."""
    cats = categorize_producers(headers, thresholds)
    out = {"window_size": len(headers), "unique_producers": cats.total, "categories": cats.to_json()}
    if headers:
        out["first_block"] = min(h.number for h in headers)
        out["last_block"] = max(h.number for h in headers)
    k_eff = min(k, cats.total)
    if k_eff:
        tops = top_producers(headers, k_eff)
        samples = {p.producer: producer_block_sample(p, sample, from_end) for p in tops}
        out["top_producers"] = [{"producer": p.producer, "blocks_produced": p.blocks_produced} for p in tops]
        long_enough = {p: s for p, s in samples.items() if len(s) >= 2}
        out["randomness"] = randomness_metrics(long_enough).to_json()
        out["samples"] = samples
    return out
