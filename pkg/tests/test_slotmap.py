import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethmerge.errors import SlotOutOfRange
from ethmerge.slotmap import NotFound, SlotResolver, bsmap, linear_scan, resolve_block_number
from ethmerge.synth import gen_slot_table

TABLE = [100, 101, None, 102, 103, None, None, 104, 105, 106]


def test_resolver_examples():
    r = SlotResolver.from_table(TABLE)
    assert resolve_block_number(7, r) == 104
    assert resolve_block_number(2, r) == 101
    assert resolve_block_number(0, SlotResolver.from_table([None, 5])) is None
    with pytest.raises(SlotOutOfRange):
        resolve_block_number(10, r)


@pytest.mark.parametrize("target,expected", [(104, 7), (100, 0), (999, NotFound), (102, 3), (106, 9)])
def test_bsmap_examples(target, expected):
    assert bsmap(9, target, SlotResolver.from_table(TABLE)) == expected


def test_notfound_sentinel():
    assert repr(NotFound) == "NotFound" and not NotFound


def test_head_beyond_resolver():
    with pytest.raises(SlotOutOfRange):
        bsmap(20, 100, SlotResolver.from_table(TABLE))


def longest_missed_run(table):
    best = run = 0
    for b in table:
        run = run + 1 if b is None else 0
        best = max(best, run)
    return best


def call_bound(table):
    head = len(table) - 1
    return math.ceil(math.log2(head + 1)) + longest_missed_run(table) + 1


@st.composite
def slot_tables(draw):
    exp = draw(st.floats(0.0, 4.0))
    n = max(1, int(10 ** exp))
    rate = draw(st.floats(0.0, 0.5))
    seed = draw(st.integers(0, 2**64 - 1))
    start = draw(st.integers(0, 10**7))
    return gen_slot_table(n, rate, seed, start)


@settings(max_examples=150, deadline=None)
@given(slot_tables())
def test_bsmap_matches_linear_scan(table):
    head = len(table) - 1
    present = [b for b in table if b is not None]
    bound = call_bound(table)
    for b in present[:: max(1, len(present) // 50)]:
        r = SlotResolver.from_table(table)
        s = bsmap(head, b, r)
        assert s == linear_scan(table, b)
        assert table[s] == b
        assert r.calls <= bound
    lo = present[0] if present else 0
    for b in (lo - 1, lo - 1000, (present[-1] if present else 0) + 1):
        r = SlotResolver.from_table(table)
        assert bsmap(head, b, r) is NotFound
        assert r.calls <= bound


def test_generated_tables_monotone():
    for seed in range(20):
        t = gen_slot_table(500, 0.5, seed, 10)
        present = [b for b in t if b is not None]
        assert all(y == x + 1 for x, y in zip(present, present[1:]))


def test_from_records_resolves(small_fixture):
    from ethmerge.ingest import load_records

    _, _, slots = load_records(small_fixture)
    r = SlotResolver.from_records(slots)
    assert bsmap(r.head, 101, r) == 2
    assert r.record(2).block_number == 101
