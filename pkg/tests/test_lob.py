from __future__ import annotations

from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobflow.lob import (
    CANCEL, LIMIT, MARKET, BookError, BookSnapshot, OrderEvent, apply_batch, diff_snapshots,
    group_update_batches, quotes_to_eventflow, write_events, write_snapshots,
)
from lobflow.synthgen import FlowParams, simulate
from lobflow.tickdata import QuoteRecord, parse_quotes
from tables import PERFECT_QUOTES, QUOTES_EXTRACT, SHIFT_QUOTES


def _ask_book(prices_qty, depth=10):
    return BookSnapshot(depth, asks=tuple(prices_qty))


def test_shift_table_is_one_batch():
    batches = group_update_batches(parse_quotes(SHIFT_QUOTES))
    assert [len(b) for b in batches] == [20]


def test_distinct_timestamps_give_one_batch_each():
    recs = [QuoteRecord(t, "A", 1, 100 + t, 5) for t in range(4)]
    assert [len(b) for b in group_update_batches(recs)] == [1, 1, 1, 1]
    assert group_update_batches([]) == []


def test_shift_batch_pushes_levels_down():
    recs = parse_quotes(SHIFT_QUOTES)
    start = apply_batch(BookSnapshot(10), recs[:10])
    after = apply_batch(start, recs[10:])
    assert after.asks[0] == (27520, 66)
    assert after.asks[1:] == start.asks[:9]
    assert (27590, 1638) not in after.asks


def test_empty_batch_is_identity():
    s = _ask_book([(100, 1), (105, 2)])
    assert apply_batch(s, []) is s


def _extract_state():
    # two unseen better levels in front of the extract's level-3 price
    recs = parse_quotes(QUOTES_EXTRACT)
    levels = [(27575, 10), (27580, 10), (27585, 697)]
    levels += [(r.price, 50) for r in recs[3:10]]
    return recs, _ask_book(levels)


def test_extract_cancel_and_limit():
    recs, s0 = _extract_state()
    s1 = apply_batch(s0, [recs[1]])
    assert diff_snapshots(s0, s1, recs[1].t) == [OrderEvent(36003970, CANCEL, "A", 27585, 520, level=3)]
    s2 = apply_batch(s1, recs[2:10])
    assert s2.asks[2:] == tuple((r.price, r.qty) for r in recs[2:10])
    s3 = apply_batch(s2, [recs[10]])
    assert diff_snapshots(s2, s3, recs[10].t) == [OrderEvent(36004613, LIMIT, "A", 27605, 627, level=6)]


def test_window_growth_at_deep_end_is_not_an_order():
    flow = quotes_to_eventflow(parse_quotes(PERFECT_QUOTES), depth=10)
    assert all(e.price != 27095 for e in flow.events)


def test_perfect_table_flow():
    flow = quotes_to_eventflow(parse_quotes(PERFECT_QUOTES), depth=10)
    got = [(e.t, e.kind, e.side, e.price, e.qty) for e in flow.events]
    assert got == [(32472086, LIMIT, "B", 27310, 210), (32472252, CANCEL, "B", 27320, 267)]
    assert flow.events[1].level == 1


def test_shift_table_flow():
    flow = quotes_to_eventflow(parse_quotes(SHIFT_QUOTES), depth=10)
    got = [(e.t, e.kind, e.side, e.price, e.qty) for e in flow.events]
    assert got == [(34819370, LIMIT, "A", 27520, 66)]


def test_constant_snapshot_gives_no_events():
    lines = [QuoteRecord(1000, "A", i + 1, 200 + i, 10) for i in range(3)]
    lines += [QuoteRecord(1000, "B", i + 1, 190 - i, 10) for i in range(3)]
    again = [QuoteRecord(2000, r.side, r.level, r.price, r.qty) for r in lines]
    flow = quotes_to_eventflow(lines + again, depth=3)
    assert flow.events == []
    assert flow.init_time == {"A": 1000, "B": 1000}


def test_crossed_book_is_reported():
    s = BookSnapshot(2, asks=((105, 1), (110, 1)), bids=((100, 1), (95, 1)))
    with pytest.raises(BookError) as exc:
        apply_batch(s, [QuoteRecord(1, "B", 1, 106, 5)])
    assert exc.value.before == s
    assert exc.value.after.best_bid == 106


def test_zero_quantity_truncates_side():
    s = _ask_book([(100, 1), (105, 2), (110, 3)])
    out = apply_batch(s, [QuoteRecord(1, "A", 2, 105, 0)])
    assert out.asks == ((100, 1),)


def test_event_invariants():
    with pytest.raises(ValueError):
        OrderEvent(0, LIMIT, "A", 1, 0)
    with pytest.raises(ValueError):
        OrderEvent(0, CANCEL, "A", 1, 1, aggressor="BUY")
    with pytest.raises(ValueError):
        OrderEvent(0, MARKET, "A", 1, 1, aggressor="SELL")
    m = OrderEvent(0, CANCEL, "B", 1, 1).as_market()
    assert (m.kind, m.aggressor) == (MARKET, "SELL")


def test_dumps_have_headers():
    flow = quotes_to_eventflow(parse_quotes(PERFECT_QUOTES), depth=10, keep_snapshots=True)
    assert write_events(flow.events).splitlines()[1] == b"32472.086,LIMIT,B,27.310,210,"
    assert write_snapshots(flow.snapshots).startswith(b"timestamp,side,level,price,qty\n")


@st.composite
def ladders(draw, side, depth=5):
    n = draw(st.integers(0, depth))
    ticks = sorted(draw(st.sets(st.integers(0, 12), min_size=n, max_size=n)))
    prices = [200 + 5 * k for k in ticks] if side == "A" else [195 - 5 * k for k in ticks]
    return tuple((p, draw(st.integers(1, 50))) for p in prices)


@st.composite
def snapshots(draw, depth=5):
    return BookSnapshot(depth, draw(ladders("A", depth)), draw(ladders("B", depth)))


@given(snapshots())
def test_diff_of_identical_snapshots_is_empty(s):
    assert diff_snapshots(s, s, 0) == []


@given(snapshots(), snapshots())
def test_diff_replays_onto_prev(prev, nxt):
    events = diff_snapshots(prev, nxt, 0)
    assert all(e.qty > 0 for e in events)
    for side in "AB":
        pq, nq = dict(prev.side(side)), dict(nxt.side(side))
        delta = defaultdict(int)
        for e in events:
            if e.side == side:
                delta[e.price] += e.qty if e.kind == LIMIT else -e.qty
        for p, d in delta.items():
            assert pq.get(p, 0) + d == nq.get(p, 0)
        # prices seen in both books carry no hidden change
        for p in set(pq) & set(nq):
            assert pq[p] + delta.get(p, 0) == nq[p]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_simulated_quotes_recover_truth(seed):
    p = FlowParams(horizon=60, depth=5, seed=seed)
    truth = simulate(p)
    flow = quotes_to_eventflow(truth.quotes, depth=5)
    expect = [(e.t, CANCEL if e.kind == MARKET else e.kind, e.side, e.price, e.qty) for e in truth.events]
    got = [(e.t, e.kind, e.side, e.price, e.qty) for e in flow.events]
    assert sorted(got) == sorted(expect)
