"""Deterministic synthetic chains used as ground truth.

All randomness comes from :class:`ethmerge.rng.SplitMix64`; each generator
splits its seed into independent sub-streams so that, for example, changing
the stickiness leaves the underlying weighted draws untouched.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .ingest import BlockHeader, SlotRecord, TxRecord
from .rng import SplitMix64

GWEI = 10**9


def producer_address(i: int) -> str:
    return "0x" + hashlib.sha256(f"producer:{i}".encode()).hexdigest()[:40]


def _block_hash(seed: int, number: int) -> str:
    return "0x" + hashlib.sha256(f"{seed}:block:{number}".encode()).hexdigest()


def _tx_hash(seed: int, i: int) -> str:
    return "0x" + hashlib.sha256(f"{seed}:tx:{i}".encode()).hexdigest()


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise InvalidConfig(f"unknown {cls.__name__} keys: {sorted(extra)}")
    return cls(**data)


@dataclass
class SynthChainConfig:
    n_blocks: int
    producer_weights: list[float]
    stickiness: float = 0.0
    missed_slot_rate: float = 0.0
    seed: int = 0
    start_block: int = 15537394
    genesis_time: int = 1663224179
    slot_seconds: int = 12
    gas_limit: int = 30_000_000
    base_fee_per_gas: int = 10 * GWEI
    active_validators: int = 420_000

    @classmethod
    def from_dict(cls, data: dict) -> "SynthChainConfig":
        return _from_dict(cls, data)

    def validate(self) -> None:
        if self.n_blocks < 1:
            raise InvalidConfig("n_blocks must be >= 1")
        if not self.producer_weights or any(not (w > 0 and math.isfinite(w)) for w in self.producer_weights):
            raise InvalidConfig("producer_weights must be non-empty and positive")
        if not 0.0 <= self.stickiness < 1.0:
            raise InvalidConfig("stickiness must be in [0, 1)")
        if not 0.0 <= self.missed_slot_rate < 1.0:
            raise InvalidConfig("missed_slot_rate must be in [0, 1)")


@dataclass
class SynthFeeConfig:
    n_txs: int = 20_000
    ar_coef: float = 0.8
    noise_scale: float = 0.3
    elasticity: float = 1.0
    price_sensitivity: float = 4.0
    tip_base_gwei: float = 0.5
    tip_slope_gwei: float = 3.0
    tip_noise: float = 0.08
    txs_per_block: int = 150
    gas_min: int = 21_000
    gas_max: int = 300_000
    initial_congestion: float = 0.0
    initial_base_fee_gwei: float = 15.0
    missed_slot_rate: float = 0.01
    n_producers: int = 40
    stickiness: float = 0.0
    seed: int = 0
    start_block: int = 18_000_001
    genesis_time: int = 1693066751
    slot_seconds: int = 12
    gas_limit: int = 30_000_000
    active_validators: int = 780_000

    @classmethod
    def from_dict(cls, data: dict) -> "SynthFeeConfig":
        return _from_dict(cls, data)

    def validate(self) -> None:
        if self.n_txs < 1:
            raise InvalidConfig("n_txs must be >= 1")
        if not -1.0 < self.ar_coef < 1.0:
            raise InvalidConfig("ar_coef must be in (-1, 1)")
        if self.noise_scale < 0 or self.tip_noise < 0:
            raise InvalidConfig("noise scales must be >= 0")
        if self.elasticity < 0 or self.price_sensitivity < 0:
            raise InvalidConfig("elasticity and price_sensitivity must be >= 0")
        if self.tip_base_gwei < 0 or self.tip_slope_gwei < 0:
            raise InvalidConfig("tip parameters must be >= 0")
        if self.txs_per_block < 1 or self.n_producers < 1:
            raise InvalidConfig("txs_per_block and n_producers must be >= 1")
        if not 0 < self.gas_min <= self.gas_max:
            raise InvalidConfig("need 0 < gas_min <= gas_max")
        if not 0.0 <= self.missed_slot_rate < 1.0:
            raise InvalidConfig("missed_slot_rate must be in [0, 1)")
        if not 0.0 <= self.stickiness < 1.0:
            raise InvalidConfig("stickiness must be in [0, 1)")
        if self.initial_base_fee_gwei <= 0:
            raise InvalidConfig("initial_base_fee_gwei must be > 0")


def draw_producers(n: int, weights, stickiness: float, pick: SplitMix64,
                   stick: SplitMix64) -> np.ndarray:
    """Producer indices for ``n`` consecutive blocks.

    Each block is a fresh weighted draw, except that with probability
    ``stickiness`` it repeats the previous block's producer.  With
    ``stickiness == 0`` the stickiness stream is not touched.
    """
    w = np.asarray(weights, dtype=np.float64)
    cum = np.cumsum(w / w.sum())
    fresh = np.searchsorted(cum, pick.random_array(n), side="right")
    fresh = np.minimum(fresh, len(w) - 1)
    if stickiness <= 0.0 or n < 2:
        return fresh.astype(np.int64)
    sticky = stick.random_array(n) < stickiness
    sticky[0] = False
    anchor = np.where(sticky, 0, np.arange(n))
    np.maximum.accumulate(anchor, out=anchor)
    return fresh[anchor].astype(np.int64)


def _missed_flags(n_proposed: int, rate: float, rng: SplitMix64) -> np.ndarray:
    """Boolean per slot (True = missed) containing exactly ``n_proposed`` proposals."""
    if rate <= 0.0:
        return np.zeros(n_proposed, dtype=bool)
    chunks = []
    proposed = 0
    chunk = max(64, int(n_proposed / (1.0 - rate) * 1.05) + 16)
    while proposed < n_proposed:
        flags = rng.random_array(chunk) < rate
        chunks.append(flags)
        proposed += int((~flags).sum())
    flags = np.concatenate(chunks)
    last = np.flatnonzero(~flags)[n_proposed - 1]
    return flags[: last + 1]


def gen_slot_table(n_slots: int, missed_rate: float, seed: int, start_block: int = 0) -> list[Optional[int]]:
    """Slot → block table (``None`` = missed) with strictly increasing blocks."""
    if n_slots < 1 or not 0.0 <= missed_rate < 1.0:
        raise InvalidConfig("need n_slots >= 1 and missed_rate in [0, 1)")
    missed = SplitMix64(seed).random_array(n_slots) < missed_rate
    out: list[Optional[int]] = []
    b = start_block
    for m in missed.tolist():
        if m:
            out.append(None)
        else:
            out.append(b)
            b += 1
    return out


@dataclass
class SynthChain:
    headers: list[BlockHeader]
    slots: list[SlotRecord]
    producer_index: np.ndarray
    txs: list[TxRecord] = field(default_factory=list)
    contexts: list[dict] = field(default_factory=list)


def _slot_records(flags: np.ndarray, first_block: int, proposers: np.ndarray, active: int,
                  rng: SplitMix64) -> tuple[list[SlotRecord], list[int]]:
    """Slot records for ``flags`` plus the slot index of each proposed block."""
    participation = 0.97 + 0.03 * rng.random_array(len(flags))
    records = []
    block_slots = []
    b = first_block
    for s, missed in enumerate(flags.tolist()):
        act = active + s // 32
        votes = int(act * participation[s]) // 32
        if missed:
            records.append(SlotRecord(s, int(proposers[s]), None, votes, act))
        else:
            records.append(SlotRecord(s, int(proposers[s]), b, votes, act))
            block_slots.append(s)
            b += 1
    return records, block_slots


def gen_producer_sequence(config: SynthChainConfig) -> tuple[list[BlockHeader], list[SlotRecord]]:
    """Headers whose producers follow the configured weights/stickiness, plus slots."""
    chain = gen_chain(config)
    return chain.headers, chain.slots


def gen_chain(config: SynthChainConfig) -> SynthChain:
    config.validate()
    master = SplitMix64(config.seed)
    slot_rng, pick_rng, stick_rng, misc_rng = (master.spawn() for _ in range(4))
    n = config.n_blocks
    flags = _missed_flags(n, config.missed_slot_rate, slot_rng)
    producers = draw_producers(n, config.producer_weights, config.stickiness, pick_rng, stick_rng)
    proposer_idx = (misc_rng.u64_array(len(flags)) % np.uint64(config.active_validators)).astype(np.int64)
    slots, block_slots = _slot_records(flags, config.start_block, proposer_idx,
                                       config.active_validators, misc_rng)
    ratios = 0.3 + 0.4 * misc_rng.random_array(n)
    addresses = [producer_address(i) for i in range(len(config.producer_weights))]
    headers = []
    for i in range(n):
        number = config.start_block + i
        headers.append(BlockHeader(
            number=number,
            hash=_block_hash(config.seed, number),
            parent_hash=_block_hash(config.seed, number - 1),
            producer=addresses[producers[i]],
            timestamp=config.genesis_time + block_slots[i] * config.slot_seconds,
            gas_used=int(ratios[i] * config.gas_limit),
            gas_limit=config.gas_limit,
            base_fee_per_gas=config.base_fee_per_gas,
        ))
    return SynthChain(headers=headers, slots=slots, producer_index=producers)


def gen_fee_chain(config: SynthFeeConfig) -> SynthChain:
    """Blocks, transactions and slots driven by an AR(1) congestion process.

    Per block: ``c_t = ar_coef * c_{t-1} + noise_scale * N(0,1)``; congestion
    level ``L_t = sigmoid(c_t - price_sensitivity * log(bf_t / bf_0))`` sets the block's gas-used ratio and its
    transaction count.  Base fee per gas follows an EIP-1559 style update
    ``bf += bf * elasticity * (gas_used - target) / target / 8``.  Each
    transaction's tip per gas is ``(tip_base + tip_slope * L_t) * exp(tip_noise * z)``,
    so priority fees rise with congestion by construction.
    """
    config.validate()
    master = SplitMix64(config.seed)
    block_rng, slot_rng, pick_rng, stick_rng, tx_rng, misc_rng = (master.spawn() for _ in range(6))

    target = config.gas_limit // 2
    bf = bf0 = int(round(config.initial_base_fee_gwei * GWEI))
    c = config.initial_congestion
    blocks = []  # (level, congestion, gas_used, base_fee, n_txs)
    total = 0
    first = True
    while total < config.n_txs:
        if not first:
            c = config.ar_coef * c + config.noise_scale * block_rng.normal()
        level = 1.0 / (1.0 + math.exp(config.price_sensitivity * math.log(bf / bf0) - c))
        gas_used = int(level * config.gas_limit)
        n_b = max(1, int(round(config.txs_per_block * (0.5 + level))))
        n_b = min(n_b, config.n_txs - total)
        blocks.append((level, c, gas_used, bf, n_b))
        total += n_b
        if target > 0:
            bf = max(1, bf + int(bf * config.elasticity * (gas_used - target) / target / 8))
        first = False

    n_blocks = len(blocks)
    flags = _missed_flags(n_blocks, config.missed_slot_rate, slot_rng)
    weights = [1.0] * config.n_producers
    producers = draw_producers(n_blocks, weights, config.stickiness, pick_rng, stick_rng)
    proposer_idx = (misc_rng.u64_array(len(flags)) % np.uint64(config.active_validators)).astype(np.int64)
    slots, block_slots = _slot_records(flags, config.start_block, proposer_idx,
                                       config.active_validators, misc_rng)
    addresses = [producer_address(i) for i in range(config.n_producers)]

    n = config.n_txs
    span = config.gas_max - config.gas_min + 1
    gas = config.gas_min + np.floor(tx_rng.random_array(n) * span).astype(np.int64)
    z = tx_rng.normal_array(n)
    values = (tx_rng.u64_array(n) >> np.uint64(4)).tolist()
    level_per_tx = np.repeat(np.array([b[0] for b in blocks]), [b[4] for b in blocks])
    tip_median_gwei = config.tip_base_gwei + config.tip_slope_gwei * level_per_tx
    tip_wei = np.floor(tip_median_gwei * np.exp(config.tip_noise * z) * GWEI).astype(np.int64)

    headers = []
    txs = []
    contexts = []
    i = 0
    gas_l = gas.tolist()
    tip_l = tip_wei.tolist()
    med_l = (tip_median_gwei * GWEI).tolist()
    for bi, (level, cong, gas_used, base_fee, n_b) in enumerate(blocks):
        number = config.start_block + bi
        ts = config.genesis_time + block_slots[bi] * config.slot_seconds
        headers.append(BlockHeader(
            number=number,
            hash=_block_hash(config.seed, number),
            parent_hash=_block_hash(config.seed, number - 1),
            producer=addresses[producers[bi]],
            timestamp=ts,
            gas_used=gas_used,
            gas_limit=config.gas_limit,
            base_fee_per_gas=base_fee,
        ))
        for _ in range(n_b):
            txs.append(TxRecord(
                tx_hash=_tx_hash(config.seed, i),
                block_number=number,
                gas_used=gas_l[i],
                gas_price=base_fee + tip_l[i],
                value=values[i],
            ))
            contexts.append({
                "block_number": number,
                "timestamp": ts,
                "congestion": cong,
                "congestion_level": level,
                "tip_median_wei_per_gas": med_l[i],
                "tip_noise": config.tip_noise,
            })
            i += 1
    return SynthChain(headers=headers, slots=slots, producer_index=producers, txs=txs, contexts=contexts)


def gen_fee_series(config: SynthFeeConfig):
    """``(FeeBreakdown, context)`` per generated transaction, in chain order."""
    from .dataset import derive_fees

    chain = gen_fee_chain(config)
    by_number = {h.number: h for h in chain.headers}
    return [(derive_fees(tx, by_number[tx.block_number]), ctx) for tx, ctx in zip(chain.txs, chain.contexts)]


def true_priority_quantile(gas_used: int, context: dict, q: float) -> float:
    """Exact ``q``-quantile of a generated transaction's priority fee in wei (before flooring)."""
    from statistics import NormalDist

    z = NormalDist().inv_cdf(q)
    return gas_used * context["tip_median_wei_per_gas"] * math.exp(context["tip_noise"] * z)


def write_fixture(chain: SynthChain, out_dir) -> None:
    from pathlib import Path

    from .ingest import HEADERS_FILE, SLOTS_FILE, TXS_FILE, write_jsonl

    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / HEADERS_FILE, chain.headers)
    write_jsonl(d / TXS_FILE, chain.txs)
    write_jsonl(d / SLOTS_FILE, chain.slots)
