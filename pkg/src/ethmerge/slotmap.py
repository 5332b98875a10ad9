"""Block-to-slot mapping by binary search over beacon slots (BSMap).

Missed slots carry no execution block.  The resolver maps a missed slot to the
block of the nearest earlier proposed slot, which keeps the searched function
non-decreasing in the slot index so that the binary search stays correct.
"""
from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

from .errors import SlotOutOfRange


class _NotFound:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NotFound"

    def __bool__(self) -> bool:
        return False


NotFound = _NotFound()


class SlotResolver:
    """Slot → optional block number lookup with a call counter.

    ``provider(slot)`` returns the slot's execution block number or ``None``
    for a missed slot.  ``calls`` counts midpoint resolutions plus backward
    steps taken by :meth:`step_back`, which is the cost BSMap is bounded by.
    """

    def __init__(self, provider: Callable[[int], Optional[int]], head: int,
                 record: Callable[[int], object] | None = None):
        if head < 0:
            raise SlotOutOfRange("negative head slot")
        self._provider = provider
        self._record = record
        self.head = head
        self.calls = 0
        self._cache: dict[int, Optional[int]] = {}

    @classmethod
    def from_table(cls, table: Sequence[Optional[int]] | Mapping[int, Optional[int]],
                   head: int | None = None) -> "SlotResolver":
        if isinstance(table, Mapping):
            h = max(table) if head is None else head
            return cls(lambda s: table.get(s), h)
        h = len(table) - 1 if head is None else head
        return cls(lambda s: table[s] if s < len(table) else None, h)

    @classmethod
    def from_records(cls, records, head: int | None = None) -> "SlotResolver":
        by_slot = {r.slot: r for r in records}
        if not by_slot:
            raise SlotOutOfRange("no slot records")
        h = max(by_slot) if head is None else head
        return cls(lambda s: by_slot[s].block_number if s in by_slot else None, h,
                   record=by_slot.__getitem__)

    @classmethod
    def from_source(cls, source, head: int | None = None) -> "SlotResolver":
        h = source.head_slot() if head is None else head
        cache: dict[int, object] = {}

        def record(s):
            if s not in cache:
                cache[s] = source.get_slot(s)
            return cache[s]

        return cls(lambda s: record(s).block_number, h, record=record)

    def record(self, slot: int):
        if self._record is None:
            raise TypeError("resolver has no record source")
        return self._record(slot)

    def _block_at(self, slot: int) -> Optional[int]:
        if slot < 0 or slot > self.head:
            raise SlotOutOfRange(f"slot {slot} outside [0, {self.head}]")
        if slot not in self._cache:
            self._cache[slot] = self._provider(slot)
        return self._cache[slot]

    def is_proposed(self, slot: int) -> bool:
        return self._block_at(slot) is not None

    def step_back(self, slot: int) -> int:
        """Walk back from ``slot`` to the nearest proposed slot at or before it."""
        s = slot
        while self._block_at(s) is None:
            s -= 1
            self.calls += 1
            if s < 0:
                raise SlotOutOfRange(f"no proposed slot at or before {slot}")
        return s

    def resolve_block_number(self, slot: int) -> Optional[int]:
        """Block number at ``slot``, or at the nearest earlier proposed slot."""
        self.calls += 1
        s = slot
        b = self._block_at(s)
        while b is None and s > 0:
            s -= 1
            b = self._block_at(s)
        return b


def resolve_block_number(slot: int, resolver: SlotResolver) -> Optional[int]:
    return resolver.resolve_block_number(slot)


def bsmap(beacon_head: int, main_chain_block_num: int, resolver: SlotResolver, low: int = 0):
    """Slot whose execution block equals ``main_chain_block_num``, else :data:`NotFound`.

    Binary search over ``[low, beacon_head]``.  A midpoint on a missed slot
    resolves to the nearest earlier block; an equality hit there walks back to
    the proposed slot that actually carries the block.
    """
    if beacon_head > resolver.head:
        raise SlotOutOfRange(f"beacon head {beacon_head} beyond resolver head {resolver.head}")
    m, n = low, beacon_head
    target = main_chain_block_num
    while m <= n:
        mid = (m + n) // 2
        b = resolver.resolve_block_number(mid)
        if b is not None and b == target:
            return resolver.step_back(mid)
        if b is None or target > b:
            m = mid + 1
        else:
            n = mid - 1
    return NotFound


def linear_scan(table: Sequence[Optional[int]], target: int):
    """Reference lookup: first slot carrying ``target``."""
    for s, b in enumerate(table):
        if b == target:
            return s
    return NotFound
