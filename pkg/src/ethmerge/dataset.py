"""Fee derivation, outlier cleaning and model-ready feature rows.

Fees are exact integers in wei::

    base_fee     = gas_used * base_fee_per_gas
    txn_fee      = gas_used * gas_price
    priority_fee = txn_fee - base_fee

Model features and targets are floats in gwei.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateDistribution,
    InconsistentRecord,
    InvalidSpec,
    UnmappedBlock,
    ZeroMedian,
)
from .ingest import BlockHeader, SlotRecord, TxRecord
from .slotmap import NotFound, SlotResolver, bsmap

GWEI = 10**9
TARGETS = ("base_fee", "priority_fee", "txn_fee", "txn_time")
FEE_TARGETS = ("base_fee", "priority_fee", "txn_fee")
DATASET_CSV = "dataset.csv"
FEATURES_JSON = "features.json"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeeBreakdown:
    tx_hash: str
    base_fee: int
    txn_fee: int
    priority_fee: int
    gas_used: int
    gas_price: int
    base_fee_per_gas: int
    block_number: int = 0


def derive_fees(tx: TxRecord, block: BlockHeader) -> FeeBreakdown:
    if tx.block_number != block.number:
        raise InconsistentRecord(f"{tx.tx_hash}: block {tx.block_number} != header {block.number}")
    if tx.gas_price < block.base_fee_per_gas:
        raise InconsistentRecord(
            f"{tx.tx_hash}: gas price {tx.gas_price} below base fee per gas {block.base_fee_per_gas}")
    base_fee = tx.gas_used * block.base_fee_per_gas
    txn_fee = tx.gas_used * tx.gas_price
    return FeeBreakdown(
        tx_hash=tx.tx_hash,
        base_fee=base_fee,
        txn_fee=txn_fee,
        priority_fee=txn_fee - base_fee,
        gas_used=tx.gas_used,
        gas_price=tx.gas_price,
        base_fee_per_gas=block.base_fee_per_gas,
        block_number=block.number,
    )


def fee_identities_hold(f: FeeBreakdown) -> bool:
    return (f.base_fee == f.gas_used * f.base_fee_per_gas
            and f.txn_fee == f.gas_used * f.gas_price
            and f.priority_fee == f.txn_fee - f.base_fee
            and f.priority_fee >= 0)


# -- statistics ------------------------------------------------------------------

def z_scores(values: Sequence[float]) -> np.ndarray:
    """``(x - mean) / std`` with the population standard deviation."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise DegenerateDistribution("z-scores need at least two values")
    mu = x.mean()
    sigma = x.std()
    if not sigma > 0:
        raise DegenerateDistribution("zero standard deviation")
    return (x - mu) / sigma


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """25th/50th/75th percentiles, linear interpolation between order statistics."""
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75], method="linear")
    return float(q25), float(q50), float(q75)


def standardized_iqr(values: Sequence[float]) -> float:
    """``(Q75 - Q25) / Q50``."""
    if len(values) < 4:
        raise DegenerateDistribution("standardized IQR needs at least four values")
    q25, q50, q75 = quartiles(values)
    if q50 == 0:
        raise ZeroMedian("median is zero")
    return (q75 - q25) / q50


# -- cleaning ------------------------------------------------------------------------

DEFAULT_SCREENED = ("base_fee", "priority_fee", "txn_fee", "gas_price")


@dataclass
class CleaningPolicy:
    z_threshold: float = 3.0
    iqr_fence_multiplier: float = 1.5
    attributes: list[str] = field(default_factory=lambda: list(DEFAULT_SCREENED))

    def __post_init__(self):
        if not self.z_threshold > 0 or not self.iqr_fence_multiplier > 0:
            raise InvalidSpec("z_threshold and iqr_fence_multiplier must be > 0")


@dataclass
class ColumnStats:
    mean: float
    std: float
    q25: float
    q50: float
    q75: float

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


@dataclass
class CleaningReport:
    rows_in: int = 0
    rows_out: int = 0
    missing: int = 0
    z_flagged: int = 0
    iqr_flagged: int = 0
    outliers_removed: int = 0
    passes: int = 0
    stats: dict[str, ColumnStats] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["stats"] = {k: asdict(v) for k, v in self.stats.items()}
        return d


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def fit_column_stats(rows: Sequence[Mapping], attributes: Iterable[str]) -> dict[str, ColumnStats]:
    stats = {}
    for a in attributes:
        x = np.array([float(r[a]) for r in rows], dtype=np.float64)
        if x.size < 2 or not x.std() > 0:
            raise DegenerateDistribution(f"column {a!r} is constant")
        q25, q50, q75 = quartiles(x)
        stats[a] = ColumnStats(float(x.mean()), float(x.std()), q25, q50, q75)
    return stats


def _screen(rows, policy: CleaningPolicy, stats: Mapping[str, ColumnStats], report: CleaningReport):
    keep = np.ones(len(rows), dtype=bool)
    m = policy.iqr_fence_multiplier
    for a in policy.attributes:
        s = stats[a]
        x = np.array([float(r[a]) for r in rows], dtype=np.float64)
        z_bad = np.abs((x - s.mean) / s.std) > policy.z_threshold
        iqr_bad = (x < s.q25 - m * s.iqr) | (x > s.q75 + m * s.iqr)
        report.z_flagged += int((z_bad & keep).sum())
        report.iqr_flagged += int((iqr_bad & keep).sum())
        keep &= ~(z_bad | iqr_bad)
    kept = [r for r, k in zip(rows, keep.tolist()) if k]
    report.outliers_removed += len(rows) - len(kept)
    return kept


def clean(rows: Sequence[Mapping], policy: CleaningPolicy | None = None,
          stats: Mapping[str, ColumnStats] | None = None,
          required: Sequence[str] = ()) -> tuple[list, CleaningReport]:
    """Drop rows with missing values, then outliers; returns ``(kept, report)``.

    A row is an outlier when any screened attribute has ``|z| > z_threshold``
    or lies outside ``[Q25 - m*IQR, Q75 + m*IQR]``.  Without ``stats`` the
    screen is refitted on the survivors and repeated until nothing more is
    removed, which makes ``clean`` idempotent.  With ``stats`` (fitted on a
    training partition) a single pass is applied.  Kept rows keep their order.
    """
    policy = policy or CleaningPolicy()
    report = CleaningReport(rows_in=len(rows))
    cols = list(dict.fromkeys([*policy.attributes, *required]))
    kept = [r for r in rows if not any(_missing(r.get(a)) for a in cols)]
    report.missing = len(rows) - len(kept)
    if stats is not None:
        report.stats = dict(stats)
        report.passes = 1
        kept = _screen(kept, policy, stats, report) if kept else kept
    else:
        while True:
            report.stats = fit_column_stats(kept, policy.attributes)
            report.passes += 1
            before = len(kept)
            kept = _screen(kept, policy, report.stats, report)
            if len(kept) == before:
                break
    report.rows_out = len(kept)
    return kept, report


# -- features --------------------------------------------------------------------------

@dataclass
class FeatureConfig:
    lag_windows: list[int] = field(default_factory=lambda: [10, 100, 1000])
    train_fraction: float = 0.8
    cleaning: CleaningPolicy = field(default_factory=CleaningPolicy)
    names: list[str] = field(default_factory=list)
    means: list[float] = field(default_factory=list)
    stds: list[float] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.lag_windows or min(self.lag_windows) < 1:
            raise InvalidSpec("lag windows must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise InvalidSpec("train_fraction must be in (0, 1)")

    @property
    def warmup(self) -> int:
        return max(self.lag_windows)

    def candidate_names(self) -> list[str]:
        lags = []
        for w in self.lag_windows:
            lags += [f"txn_fee_mean_{w}", f"priority_fee_mean_{w}"]
        return ["gas_used", "block_gas_ratio", "base_fee_per_gas", *lags, "txs_per_block",
                "total_votes", "active_validators", "seconds_since_prev_block", "tod_sin", "tod_cos"]

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        d["cleaning"] = CleaningPolicy(**d["cleaning"])
        return cls(**d)


@dataclass(frozen=True)
class FeatureRow:
    tx_hash: str
    features: tuple[float, ...]
    targets: dict


@dataclass
class Dataset:
    """Standardized feature matrix with fee/time targets and a temporal split.

    Rows ``[0, split_index)`` are the training partition.  ``estimates`` holds
    the last-1000 baseline per target (NaN where history is too short).
    """
    feature_names: list[str]
    X: np.ndarray
    targets: dict[str, np.ndarray]
    split_index: int
    tx_hashes: list[str] = field(default_factory=list)
    block_numbers: np.ndarray | None = None
    estimates: dict[str, np.ndarray] = field(default_factory=dict)
    wei: dict[str, list[int]] = field(default_factory=dict)
    config: FeatureConfig | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_arrays(cls, X, y, feature_names: Sequence[str] | None = None, target: str = "txn_fee",
                    split_index: int | None = None) -> "Dataset":
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidSpec("X must be two-dimensional")
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
        targets = y if isinstance(y, dict) else {target: np.asarray(y, dtype=np.float64)}
        targets = {k: np.asarray(v, dtype=np.float64) for k, v in targets.items()}
        n = X.shape[0]
        return cls(names, X, targets, n if split_index is None else split_index,
                   tx_hashes=[f"row{i}" for i in range(n)], block_numbers=np.zeros(n, dtype=np.int64))

    def partition(self, split: str) -> "Dataset":
        if split == "train":
            sl = slice(0, self.split_index)
        elif split == "test":
            sl = slice(self.split_index, len(self))
        elif split == "all":
            sl = slice(0, len(self))
        else:
            raise InvalidSpec(f"unknown split {split!r}")
        return Dataset(
            feature_names=list(self.feature_names),
            X=self.X[sl],
            targets={k: v[sl] for k, v in self.targets.items()},
            split_index=self.split_index - sl.start if split != "test" else 0,
            tx_hashes=self.tx_hashes[sl],
            block_numbers=None if self.block_numbers is None else self.block_numbers[sl],
            estimates={k: v[sl] for k, v in self.estimates.items()},
            wei={k: v[sl] for k, v in self.wei.items()},
            config=self.config,
            meta=self.meta,
        )

    def target(self, name: str) -> np.ndarray:
        if name not in self.targets:
            raise InvalidSpec(f"dataset has no target {name!r}")
        return self.targets[name]

    def row(self, i: int) -> FeatureRow:
        return FeatureRow(self.tx_hashes[i], tuple(self.X[i].tolist()),
                          {k: float(v[i]) for k, v in self.targets.items()})

    # -- persistence --
    def save(self, out_dir: str | os.PathLike, extra: dict | None = None) -> None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        fee_cols = [t for t in FEE_TARGETS if t in self.targets]
        header = ["tx_hash", "block_number", "timestamp", "split"]
        header += [f"{t}_wei" for t in fee_cols if t in self.wei]
        header += fee_cols + [f"est_{t}" for t in fee_cols if t in self.estimates]
        header += list(self.feature_names)
        ts = self.targets.get("txn_time")
        with open(d / DATASET_CSV, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(self)):
                row = [self.tx_hashes[i],
                       int(self.block_numbers[i]) if self.block_numbers is not None else 0,
                       int(ts[i]) if ts is not None else 0,
                       "train" if i < self.split_index else "test"]
                row += [str(self.wei[t][i]) for t in fee_cols if t in self.wei]
                row += [repr(float(self.targets[t][i])) for t in fee_cols]
                for t in fee_cols:
                    if t in self.estimates:
                        v = float(self.estimates[t][i])
                        row.append("" if math.isnan(v) else repr(v))
                row += [repr(v) for v in self.X[i].tolist()]
                w.writerow(row)
        sidecar = {
            "format_version": FORMAT_VERSION,
            "feature_config": self.config.to_json() if self.config else None,
            "feature_names": list(self.feature_names),
            "split": {"train_rows": self.split_index, "test_rows": len(self) - self.split_index},
            **self.meta,
            **(extra or {}),
        }
        (d / FEATURES_JSON).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "Dataset":
        d = Path(directory)
        sidecar = json.loads((d / FEATURES_JSON).read_text(encoding="utf-8"))
        names = sidecar["feature_names"]
        with open(d / DATASET_CSV, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        col = {h: i for i, h in enumerate(header)}
        n = len(body)
        X = np.array([[float(r[col[f]]) for f in names] for r in body], dtype=np.float64).reshape(n, len(names))
        targets = {t: np.array([float(r[col[t]]) for r in body]) for t in FEE_TARGETS if t in col}
        targets["txn_time"] = np.array([float(r[col["timestamp"]]) for r in body])
        estimates = {t: np.array([float(r[col[f"est_{t}"]]) if r[col[f"est_{t}"]] else math.nan for r in body])
                     for t in FEE_TARGETS if f"est_{t}" in col}
        wei = {t: [int(r[col[f"{t}_wei"]]) for r in body] for t in FEE_TARGETS if f"{t}_wei" in col}
        split_index = sum(1 for r in body if r[col["split"]] == "train")
        cfg = FeatureConfig.from_json(sidecar["feature_config"]) if sidecar.get("feature_config") else None
        meta = {k: v for k, v in sidecar.items()
                if k not in ("format_version", "feature_config", "feature_names", "split")}
        return cls(names, X, targets, split_index,
                   tx_hashes=[r[col["tx_hash"]] for r in body],
                   block_numbers=np.array([int(r[col["block_number"]]) for r in body], dtype=np.int64),
                   estimates=estimates, wei=wei, config=cfg, meta=meta)


def rolling_baseline(values_wei: Sequence[int], window: int = 1000) -> np.ndarray:
    """Mean of the previous ``window`` values per position, in gwei (NaN if too short).

    Sums are exact integers; each mean is a single correctly rounded division.
    """
    out = np.full(len(values_wei), math.nan)
    prefix = [0]
    for v in values_wei:
        prefix.append(prefix[-1] + v)
    for i in range(window, len(values_wei)):
        out[i] = (prefix[i] - prefix[i - window]) / (window * GWEI)
    return out


def _lag_means(values: np.ndarray, window: int) -> np.ndarray:
    out = np.full(values.size, math.nan)
    prefix = np.concatenate([[0.0], np.cumsum(values)])
    i = np.arange(window, values.size)
    out[i] = (prefix[i] - prefix[i - window]) / window
    return out


def _precursors(fees: Sequence[FeeBreakdown], blocks: Sequence[BlockHeader],
                slots: Sequence[SlotRecord]) -> list[dict]:
    by_number = {b.number: b for b in blocks}
    resolver = SlotResolver.from_records(slots)
    tx_count: dict[int, int] = {}
    for f in fees:
        tx_count[f.block_number] = tx_count.get(f.block_number, 0) + 1
    slot_of: dict[int, SlotRecord] = {}
    rows = []
    for f in fees:
        bn = f.block_number
        blk = by_number.get(bn)
        if blk is None:
            raise UnmappedBlock(f"no header for block {bn}")
        if bn not in slot_of:
            s = bsmap(resolver.head, bn, resolver)
            if s is NotFound:
                raise UnmappedBlock(f"block {bn} has no beacon slot")
            slot_of[bn] = resolver.record(s)
        rec = slot_of[bn]
        prev = by_number.get(bn - 1)
        rows.append({
            "tx_hash": f.tx_hash,
            "block_number": bn,
            "timestamp": blk.timestamp,
            "base_fee_wei": f.base_fee,
            "priority_fee_wei": f.priority_fee,
            "txn_fee_wei": f.txn_fee,
            "base_fee": f.base_fee / GWEI,
            "priority_fee": f.priority_fee / GWEI,
            "txn_fee": f.txn_fee / GWEI,
            "gas_price": f.gas_price / GWEI,
            "gas_used": float(f.gas_used),
            "block_gas_ratio": blk.gas_used / blk.gas_limit if blk.gas_limit else None,
            "base_fee_per_gas": blk.base_fee_per_gas / GWEI,
            "txs_per_block": float(tx_count[bn]),
            "total_votes": float(rec.total_votes),
            "active_validators": float(rec.active_validators),
            "seconds_since_prev_block": float(blk.timestamp - prev.timestamp) if prev else None,
        })
    return rows


def build_feature_rows(fees: Sequence[FeeBreakdown], blocks: Sequence[BlockHeader],
                       slots: Sequence[SlotRecord], config: FeatureConfig | None = None) -> Dataset:
    """Join fees to block and slot context, clean, add lag features, standardize.

    The temporal split is taken on the chronological input: cleaning
    statistics and standardization statistics are both fitted on the training
    partition only and then applied to the test partition.  The first
    ``max(lag_windows)`` surviving rows are dropped as warm-up.
    """
    config = config or FeatureConfig()
    fees = sorted(fees, key=lambda f: f.block_number)  # stable: keeps in-block order
    rows = _precursors(fees, blocks, slots)
    n_train_raw = int(len(rows) * config.train_fraction)
    required = ["block_gas_ratio", "seconds_since_prev_block"]
    train_rows, train_report = clean(rows[:n_train_raw], config.cleaning, required=required)
    test_rows, test_report = clean(rows[n_train_raw:], config.cleaning, stats=train_report.stats,
                                   required=required)
    kept = train_rows + test_rows
    n_train_clean = len(train_rows)

    txn = np.array([r["txn_fee"] for r in kept])
    prio = np.array([r["priority_fee"] for r in kept])
    lag_cols = {}
    for w in config.lag_windows:
        lag_cols[f"txn_fee_mean_{w}"] = _lag_means(txn, w)
        lag_cols[f"priority_fee_mean_{w}"] = _lag_means(prio, w)
    estimates = {t: rolling_baseline([r[f"{t}_wei"] for r in kept]) for t in FEE_TARGETS}

    warm = min(config.warmup, len(kept))
    sel = slice(warm, len(kept))
    split_index = max(n_train_clean - warm, 0)

    candidates = config.candidate_names()
    cols = []
    ts = np.array([r["timestamp"] for r in kept], dtype=np.float64)
    angle = 2.0 * math.pi * (np.mod(ts, 86400.0) / 86400.0)
    for name in candidates:
        if name in lag_cols:
            cols.append(lag_cols[name])
        elif name == "tod_sin":
            cols.append(np.sin(angle))
        elif name == "tod_cos":
            cols.append(np.cos(angle))
        else:
            cols.append(np.array([r[name] for r in kept], dtype=np.float64))
    raw = np.column_stack(cols)[sel] if kept else np.zeros((0, len(candidates)))
    if split_index < 2:
        raise InvalidSpec(f"only {split_index} training rows after cleaning and warm-up")

    train_raw = raw[:split_index]
    means = train_raw.mean(axis=0)
    stds = train_raw.std(axis=0)
    keep_cols = [j for j in range(len(candidates)) if stds[j] > 0]
    config.names = [candidates[j] for j in keep_cols]
    config.dropped = [candidates[j] for j in range(len(candidates)) if j not in keep_cols]
    config.means = [float(means[j]) for j in keep_cols]
    config.stds = [float(stds[j]) for j in keep_cols]
    X = (raw[:, keep_cols] - np.array(config.means)) / np.array(config.stds)

    body = kept[warm:]
    targets = {t: np.array([r[t] for r in body], dtype=np.float64) for t in FEE_TARGETS}
    targets["txn_time"] = ts[sel].copy()
    meta = {
        "cleaning": {"train": train_report.to_json(), "test": test_report.to_json()},
        "warmup_rows": warm,
        "boundary": {"block_number": body[split_index]["block_number"] if split_index < len(body) else None,
                     "tx_hash": body[split_index]["tx_hash"] if split_index < len(body) else None},
        "train_block_range": [body[0]["block_number"], body[split_index - 1]["block_number"]],
    }
    return Dataset(
        feature_names=list(config.names),
        X=np.ascontiguousarray(X),
        targets=targets,
        split_index=split_index,
        tx_hashes=[r["tx_hash"] for r in body],
        block_numbers=np.array([r["block_number"] for r in body], dtype=np.int64),
        estimates={t: v[sel] for t, v in estimates.items()},
        wei={t: [r[f"{t}_wei"] for r in body] for t in FEE_TARGETS},
        config=config,
        meta=meta,
    )


def dataset_from_records(headers: Sequence[BlockHeader], txs: Sequence[TxRecord],
                         slots: Sequence[SlotRecord], config: FeatureConfig | None = None) -> Dataset:
    by_number = {h.number: h for h in headers}
    fees = [derive_fees(tx, by_number[tx.block_number]) for tx in txs if tx.block_number in by_number]
    return build_feature_rows(fees, headers, slots, config)
