"""Execution- and consensus-layer record acquisition.

Records come from a fixture directory (``headers.jsonl``, ``txs.jsonl``,
``slots.jsonl``; integers as decimal strings) or from live endpoints: an
execution JSON-RPC 2.0 node and a Beacon REST API.  :func:`ingest` persists a
block range into a store directory using the same three files plus
``summary.json``.
"""
from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol, Sequence, TypeVar

from .errors import (
    EndpointUnreachable,
    GapDetected,
    InvalidRange,
    MalformedResponse,
    SlotOutOfRange,
    StoreWriteFailure,
    UnknownBlock,
)

log = logging.getLogger(__name__)

HEADERS_FILE = "headers.jsonl"
TXS_FILE = "txs.jsonl"
SLOTS_FILE = "slots.jsonl"
SUMMARY_FILE = "summary.json"

T = TypeVar("T")


@dataclass(frozen=True)
class BlockHeader:
    number: int
    hash: str
    parent_hash: str
    producer: str
    timestamp: int
    gas_used: int
    gas_limit: int
    base_fee_per_gas: int


@dataclass(frozen=True)
class TxRecord:
    tx_hash: str
    block_number: int
    gas_used: int
    gas_price: int
    value: int


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    proposer_index: int
    block_number: Optional[int]
    total_votes: int
    active_validators: int

    @property
    def missed(self) -> bool:
        return self.block_number is None


@dataclass
class IngestSummary:
    blocks_fetched: int = 0
    txs_fetched: int = 0
    slots_fetched: int = 0
    gaps: list[tuple[int, int]] = field(default_factory=list)
    retries: int = 0


# -- record (de)serialization ------------------------------------------------

_HEADER_INT = ("number", "timestamp", "gas_used", "gas_limit", "base_fee_per_gas")
_TX_INT = ("block_number", "gas_used", "gas_price", "value")
_SLOT_INT = ("slot", "proposer_index", "total_votes", "active_validators")


def _dec(obj: dict, key: str, what: str) -> int:
    if key not in obj or obj[key] is None:
        raise MalformedResponse(f"{what}: missing field {key!r}")
    raw = obj[key]
    if isinstance(raw, bool):
        raise MalformedResponse(f"{what}: field {key!r} is not numeric")
    try:
        val = int(raw, 10) if isinstance(raw, str) else int(raw)
    except (TypeError, ValueError):
        raise MalformedResponse(f"{what}: field {key!r} is not numeric: {raw!r}") from None
    if isinstance(raw, float) and raw != val:
        raise MalformedResponse(f"{what}: field {key!r} is not an integer")
    if val < 0:
        raise MalformedResponse(f"{what}: field {key!r} is negative")
    return val


def _str(obj: dict, key: str, what: str) -> str:
    val = obj.get(key)
    if not isinstance(val, str):
        raise MalformedResponse(f"{what}: missing field {key!r}")
    return val


def header_from_json(obj: dict) -> BlockHeader:
    ints = {k: _dec(obj, k, "header") for k in _HEADER_INT}
    return BlockHeader(hash=_str(obj, "hash", "header"), parent_hash=_str(obj, "parent_hash", "header"),
                       producer=_str(obj, "producer", "header"), **ints)


def tx_from_json(obj: dict) -> TxRecord:
    ints = {k: _dec(obj, k, "transaction") for k in _TX_INT}
    return TxRecord(tx_hash=_str(obj, "tx_hash", "transaction"), **ints)


def slot_from_json(obj: dict) -> SlotRecord:
    ints = {k: _dec(obj, k, "slot") for k in _SLOT_INT}
    bn = obj.get("block_number")
    block_number = None if bn is None else _dec(obj, "block_number", "slot")
    return SlotRecord(block_number=block_number, **ints)


def record_to_json(rec) -> dict:
    out = {}
    for k, v in asdict(rec).items():
        out[k] = str(v) if isinstance(v, int) and not isinstance(v, bool) else v
    return out


def dumps_record(rec) -> str:
    return json.dumps(record_to_json(rec), sort_keys=True, separators=(",", ":"))


def read_jsonl(path: Path, parse: Callable[[dict], T]) -> list[T]:
    out = []
    if not path.exists():
        return out
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedResponse(f"{path.name}:{lineno}: {exc}") from None
            out.append(parse(obj))
    return out


def write_jsonl(path: Path, records: Iterable) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(dumps_record(rec))
                fh.write("\n")
    except OSError as exc:
        raise StoreWriteFailure(f"cannot write {path}: {exc}") from exc


def contiguous_ranges(numbers: Iterable[int]) -> list[tuple[int, int]]:
    """Collapse sorted integers into inclusive ``(first, last)`` runs."""
    out: list[tuple[int, int]] = []
    for n in numbers:
        if out and n == out[-1][1] + 1:
            out[-1] = (out[-1][0], n)
        else:
            out.append((n, n))
    return out


# -- sources -------------------------------------------------------------------

class ExecutionSource(Protocol):
    def get_header(self, number: int) -> BlockHeader: ...
    def get_block_transactions(self, number: int) -> list[TxRecord]: ...


class ConsensusSource(Protocol):
    def head_slot(self) -> int: ...
    def get_slot(self, slot: int) -> SlotRecord: ...


class FixtureSource:
    """Execution and consensus records served from a fixture directory."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise EndpointUnreachable(f"fixture directory {self.directory} does not exist")
        self._headers: dict[int, BlockHeader] | None = None
        self._txs: dict[int, list[TxRecord]] | None = None
        self._slots: dict[int, SlotRecord] | None = None

    @property
    def headers(self) -> dict[int, BlockHeader]:
        if self._headers is None:
            self._headers = {h.number: h for h in read_jsonl(self.directory / HEADERS_FILE, header_from_json)}
        return self._headers

    @property
    def txs(self) -> dict[int, list[TxRecord]]:
        if self._txs is None:
            # parsed lazily per record so a malformed receipt fails the block that owns it
            by_block: dict[int, list[dict]] = {}
            path = self.directory / TXS_FILE
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            obj = json.loads(line)
                            by_block.setdefault(_dec(obj, "block_number", "transaction"), []).append(obj)
            self._txs = by_block  # type: ignore[assignment]
        return self._txs  # type: ignore[return-value]

    @property
    def slots(self) -> dict[int, SlotRecord]:
        if self._slots is None:
            self._slots = {s.slot: s for s in read_jsonl(self.directory / SLOTS_FILE, slot_from_json)}
        return self._slots

    def get_header(self, number: int) -> BlockHeader:
        try:
            return self.headers[number]
        except KeyError:
            raise UnknownBlock(f"block {number} not in fixture") from None

    def get_block_transactions(self, number: int) -> list[TxRecord]:
        if number not in self.headers:
            raise UnknownBlock(f"block {number} not in fixture")
        return [tx_from_json(obj) for obj in self.txs.get(number, [])]

    def head_slot(self) -> int:
        if not self.slots:
            raise SlotOutOfRange("fixture has no slots")
        return max(self.slots)

    def get_slot(self, slot: int) -> SlotRecord:
        if slot < 0 or slot > self.head_slot():
            raise SlotOutOfRange(f"slot {slot} beyond head {self.head_slot()}")
        rec = self.slots.get(slot)
        if rec is None:
            # slots absent from the file inside [0, head] are missed slots
            return SlotRecord(slot=slot, proposer_index=0, block_number=None, total_votes=0, active_validators=0)
        return rec


def with_retries(fn: Callable[[], T], attempts: int = 3, backoff: float = 0.5,
                 on_retry: Callable[[], None] | None = None) -> T:
    """Call ``fn``; retry :class:`EndpointUnreachable` with exponential backoff."""
    for attempt in range(1, attempts + 1):
        try:
            return fn()
        except EndpointUnreachable as exc:
            if attempt == attempts:
                raise EndpointUnreachable(f"{exc} (after {attempts} attempts)", attempts=attempts) from exc
            if on_retry is not None:
                on_retry()
            time.sleep(backoff * 2 ** (attempt - 1))
    raise AssertionError("unreachable")


def _hex_quantity(obj: dict, key: str, what: str) -> int:
    raw = obj.get(key)
    if not isinstance(raw, str) or not raw.startswith("0x"):
        raise MalformedResponse(f"{what}: missing or non-hex field {key!r}")
    try:
        return int(raw, 16)
    except ValueError:
        raise MalformedResponse(f"{what}: field {key!r} is not a hex quantity: {raw!r}") from None


class _HttpMixin:
    timeout: float
    attempts: int
    backoff: float
    retries: int

    def _request(self, req: urllib.request.Request, allow_404: bool = False):
        def once():
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                if allow_404 and exc.code == 404:
                    return None
                if exc.code >= 500:
                    raise EndpointUnreachable(f"{req.full_url}: HTTP {exc.code}") from exc
                raise MalformedResponse(f"{req.full_url}: HTTP {exc.code}") from exc
            except (urllib.error.URLError, OSError) as exc:
                raise EndpointUnreachable(f"{req.full_url}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise MalformedResponse(f"{req.full_url}: invalid JSON: {exc}") from exc

        def bump():
            self.retries += 1

        return with_retries(once, self.attempts, self.backoff, bump)


class JsonRpcSource(_HttpMixin):
    """Execution client over JSON-RPC 2.0.

    Headers use ``eth_getBlockByNumber(n, false)``.  Transactions use
    ``eth_getBlockByNumber(n, true)`` for ordering and value, then
    ``eth_getTransactionReceipt`` for gas used and effective gas price.
    """

    def __init__(self, url: str, timeout: float = 10.0, attempts: int = 3, backoff: float = 0.5):
        self.url = url
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.retries = 0
        self._id = 0

    def call(self, method: str, params: list):
        self._id += 1
        body = json.dumps({"jsonrpc": "2.0", "id": self._id, "method": method, "params": params}).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        resp = self._request(req)
        if not isinstance(resp, dict):
            raise MalformedResponse(f"{method}: response is not an object")
        if resp.get("error"):
            raise MalformedResponse(f"{method}: {resp['error']}")
        return resp.get("result")

    def _block(self, number: int, full: bool) -> dict:
        result = self.call("eth_getBlockByNumber", [hex(number), full])
        if result is None:
            raise UnknownBlock(f"block {number} unknown to {self.url}")
        if not isinstance(result, dict):
            raise MalformedResponse("eth_getBlockByNumber: result is not an object")
        return result

    def get_header(self, number: int) -> BlockHeader:
        b = self._block(number, False)
        return BlockHeader(
            number=_hex_quantity(b, "number", "block"),
            hash=_str(b, "hash", "block"),
            parent_hash=_str(b, "parentHash", "block"),
            producer=_str(b, "miner", "block").lower(),
            timestamp=_hex_quantity(b, "timestamp", "block"),
            gas_used=_hex_quantity(b, "gasUsed", "block"),
            gas_limit=_hex_quantity(b, "gasLimit", "block"),
            base_fee_per_gas=_hex_quantity(b, "baseFeePerGas", "block"),
        )

    def get_block_transactions(self, number: int) -> list[TxRecord]:
        b = self._block(number, True)
        out = []
        for tx in b.get("transactions") or []:
            if not isinstance(tx, dict):
                raise MalformedResponse("eth_getBlockByNumber(full): transaction is not an object")
            h = _str(tx, "hash", "transaction")
            receipt = self.call("eth_getTransactionReceipt", [h])
            if not isinstance(receipt, dict):
                raise MalformedResponse(f"receipt for {h} missing")
            price_key = "effectiveGasPrice" if "effectiveGasPrice" in receipt else "gasPrice"
            out.append(TxRecord(
                tx_hash=h,
                block_number=number,
                gas_used=_hex_quantity(receipt, "gasUsed", "receipt"),
                gas_price=_hex_quantity(receipt, price_key, "receipt"),
                value=_hex_quantity(tx, "value", "transaction"),
            ))
        return out


class BeaconApiSource(_HttpMixin):
    """Consensus client over the Beacon REST API.

    ``/eth/v1/beacon/headers/{slot}`` gives the proposer, ``/eth/v2/beacon/blocks/{slot}``
    the execution block number and attestations (404 on either means a missed
    slot), and ``/eth/v1/beacon/states/{slot}/committees`` the active validator
    count (sum of committee sizes over the epoch, cached per epoch).
    """

    SLOTS_PER_EPOCH = 32

    def __init__(self, url: str, timeout: float = 10.0, attempts: int = 3, backoff: float = 0.5):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.retries = 0
        self._head: int | None = None
        self._active: dict[int, int] = {}

    def _get(self, path: str, allow_404: bool = False):
        return self._request(urllib.request.Request(self.url + path), allow_404=allow_404)

    def head_slot(self) -> int:
        if self._head is None:
            resp = self._get("/eth/v1/beacon/headers/head")
            try:
                self._head = int(resp["data"]["header"]["message"]["slot"])
            except (KeyError, TypeError, ValueError):
                raise MalformedResponse("beacon head: missing data.header.message.slot") from None
        return self._head

    def _active_validators(self, slot: int) -> int:
        epoch = slot // self.SLOTS_PER_EPOCH
        if epoch not in self._active:
            resp = self._get(f"/eth/v1/beacon/states/{slot}/committees?epoch={epoch}", allow_404=True)
            if resp is None:
                return 0
            try:
                self._active[epoch] = sum(len(c["validators"]) for c in resp["data"])
            except (KeyError, TypeError):
                raise MalformedResponse("committees: malformed data") from None
        return self._active[epoch]

    def get_slot(self, slot: int) -> SlotRecord:
        if slot < 0 or slot > self.head_slot():
            raise SlotOutOfRange(f"slot {slot} beyond head {self.head_slot()}")
        hdr = self._get(f"/eth/v1/beacon/headers/{slot}", allow_404=True)
        blk = self._get(f"/eth/v2/beacon/blocks/{slot}", allow_404=True) if hdr is not None else None
        if hdr is None or blk is None:
            return SlotRecord(slot=slot, proposer_index=0, block_number=None, total_votes=0,
                              active_validators=self._active_validators(slot))
        try:
            proposer = int(hdr["data"]["header"]["message"]["proposer_index"])
            body = blk["data"]["message"]["body"]
            block_number = int(body["execution_payload"]["block_number"])
            votes = 0
            for att in body.get("attestations", []):
                bits = bytes.fromhex(att["aggregation_bits"][2:])
                # SSZ bitlist: highest set bit is the length delimiter
                votes += sum(bin(b).count("1") for b in bits) - (1 if any(bits) else 0)
        except (KeyError, TypeError, ValueError):
            raise MalformedResponse(f"slot {slot}: malformed beacon block") from None
        return SlotRecord(slot=slot, proposer_index=proposer, block_number=block_number,
                          total_votes=votes, active_validators=self._active_validators(slot))


# -- fetch operations ------------------------------------------------------------

def _check_range(start: int, end: int) -> None:
    if start < 0 or end < start:
        raise InvalidRange(f"invalid block range [{start},{end}]")


def _ordered_map(fn: Callable[[int], T], items: Sequence[int], workers: int) -> list:
    """Apply ``fn`` to every item; results in input order, exceptions kept per item."""
    def safe(x):
        try:
            return fn(x)
        except Exception as exc:  # re-raised by the caller in order
            return exc

    if workers <= 1 or len(items) <= 1:
        return [safe(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(safe, items))


def fetch_headers(start: int, end: int, source: ExecutionSource, workers: int = 1) -> list[BlockHeader]:
    """All headers in ``[start, end]`` ascending, or an error; never partial."""
    _check_range(start, end)
    numbers = list(range(start, end + 1))
    results = _ordered_map(source.get_header, numbers, workers)
    missing = []
    headers = []
    for n, res in zip(numbers, results):
        if isinstance(res, UnknownBlock):
            missing.append(n)
        elif isinstance(res, Exception):
            raise res
        else:
            if res.number != n:
                raise MalformedResponse(f"asked for block {n}, got {res.number}")
            headers.append(res)
    if missing:
        raise GapDetected(contiguous_ranges(missing))
    return headers


def fetch_block_transactions(block_number: int, source: ExecutionSource) -> list[TxRecord]:
    return source.get_block_transactions(block_number)


def fetch_slot_record(slot: int, source: ConsensusSource) -> SlotRecord:
    return source.get_slot(slot)


def check_header_chain(headers: Sequence[BlockHeader]) -> list[int]:
    """Block numbers whose parent_hash does not match the preceding header's hash."""
    bad = []
    for prev, cur in zip(headers, headers[1:]):
        if cur.number == prev.number + 1 and cur.parent_hash != prev.hash:
            bad.append(cur.number)
    return bad


# -- store -------------------------------------------------------------------------

def range_dir(store: str | os.PathLike, start: int, end: int) -> Path:
    return Path(store) / f"{start}-{end}"


def _load_store(d: Path):
    headers = {h.number: h for h in read_jsonl(d / HEADERS_FILE, header_from_json)}
    txs = read_jsonl(d / TXS_FILE, tx_from_json)
    slots = {s.slot: s for s in read_jsonl(d / SLOTS_FILE, slot_from_json)}
    return headers, txs, slots


def ingest(start: int, end: int, execution: ExecutionSource, store: str | os.PathLike,
           consensus: ConsensusSource | None = None, workers: int = 1) -> IngestSummary:
    """Fetch ``[start, end]`` into ``store/<start>-<end>/``; idempotent.

    Blocks and slots already present in the store are not fetched again, so a
    second run over the same range fetches nothing and rewrites identical
    bytes.  Missing blocks are recorded as gaps rather than aborting.
    """
    from .slotmap import NotFound, SlotResolver, bsmap

    _check_range(start, end)
    d = range_dir(store, start, end)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StoreWriteFailure(f"cannot create {d}: {exc}") from exc

    headers, txs, slots = _load_store(d)
    summary = IngestSummary()

    todo = [n for n in range(start, end + 1) if n not in headers]
    results = _ordered_map(execution.get_header, todo, workers)
    fresh = []
    for n, res in zip(todo, results):
        if isinstance(res, UnknownBlock):
            continue
        if isinstance(res, Exception):
            raise res
        fresh.append(res)
    tx_results = _ordered_map(execution.get_block_transactions, [h.number for h in fresh], workers)
    for h, res in zip(fresh, tx_results):
        if isinstance(res, Exception):
            raise res
        headers[h.number] = h
        txs.extend(res)
        summary.blocks_fetched += 1
        summary.txs_fetched += len(res)

    summary.gaps = contiguous_ranges(n for n in range(start, end + 1) if n not in headers)

    if consensus is not None and headers:
        head = consensus.head_slot()
        resolver = SlotResolver.from_source(consensus, head)
        lo_slot = bsmap(head, min(headers), resolver)
        hi_slot = bsmap(head, max(headers), resolver)
        if lo_slot is NotFound or hi_slot is NotFound:
            log.warning("blocks %s..%s not found on the beacon chain; slots skipped", min(headers), max(headers))
        else:
            for s in range(lo_slot, hi_slot + 1):
                if s in slots:
                    continue
                slots[s] = resolver.record(s)
                summary.slots_fetched += 1

    summary.retries = getattr(execution, "retries", 0) + getattr(consensus, "retries", 0)

    txs.sort(key=lambda t: t.block_number)  # stable: keeps in-block order
    write_jsonl(d / HEADERS_FILE, (headers[n] for n in sorted(headers)))
    write_jsonl(d / TXS_FILE, txs)
    write_jsonl(d / SLOTS_FILE, (slots[s] for s in sorted(slots)))
    state = {
        "start": start,
        "end": end,
        "blocks": len(headers),
        "txs": len(txs),
        "slots": len(slots),
        "gaps": [list(g) for g in summary.gaps],
    }
    try:
        (d / SUMMARY_FILE).write_text(json.dumps(state, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreWriteFailure(f"cannot write summary: {exc}") from exc
    return summary


def load_records(path: str | os.PathLike) -> tuple[list[BlockHeader], list[TxRecord], list[SlotRecord]]:
    """Read a store range directory, a fixture directory, or a store root.

    A store root (no ``headers.jsonl`` of its own) is the union of its range
    subdirectories.
    """
    p = Path(path)
    dirs = [p] if (p / HEADERS_FILE).exists() else sorted(x for x in p.iterdir() if (x / HEADERS_FILE).exists())
    if not dirs:
        raise FileNotFoundError(f"no {HEADERS_FILE} under {p}")
    headers: dict[int, BlockHeader] = {}
    slots: dict[int, SlotRecord] = {}
    txs: dict[str, TxRecord] = {}
    for d in dirs:
        h, t, s = _load_store(d)
        headers.update(h)
        slots.update(s)
        for tx in t:
            txs.setdefault(tx.tx_hash, tx)
    tx_list = sorted(txs.values(), key=lambda t: t.block_number)
    if len(dirs) > 1:
        # restore in-block order from the first directory that had each block
        order: dict[str, int] = {}
        for d in dirs:
            for i, tx in enumerate(read_jsonl(d / TXS_FILE, tx_from_json)):
                order.setdefault(tx.tx_hash, i)
        tx_list.sort(key=lambda t: (t.block_number, order[t.tx_hash]))
    return [headers[n] for n in sorted(headers)], tx_list, [slots[s] for s in sorted(slots)]
