"""Visible order book and conversion of a quotes stream into LIMIT/CANCEL events.

Book updates are applied line by line and keyed by price: a line ``(level L,
price p, qty q)`` asserts that ``p`` is the L-th best price on its side, so any
better price beyond the first L-1 is dropped. Level shifts therefore need no
special casing; they show up as prices entering or leaving the N-level window.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field
from itertools import groupby
from typing import Iterable, Sequence

import numpy as np

from .tickdata import QuoteRecord, format_price, format_time

LIMIT = "LIMIT"
CANCEL = "CANCEL"
MARKET = "MARKET"
BUY = "BUY"
SELL = "SELL"


class BookError(ValueError):
    """Book inconsistent after applying a batch (crossed or malformed)."""

    def __init__(self, message: str, before: "BookSnapshot | None" = None, after: "BookSnapshot | None" = None):
        super().__init__(message)
        self.before = before
        self.after = after


@dataclass(frozen=True, slots=True)
class OrderEvent:
    t: int
    kind: str
    side: str
    price: int
    qty: int
    aggressor: str | None = None
    level: int | None = None

    def __post_init__(self):
        if self.qty <= 0:
            raise ValueError(f"event quantity must be positive: {self}")
        if (self.aggressor is not None) != (self.kind == MARKET):
            raise ValueError(f"aggressor must be set iff kind is MARKET: {self}")
        if self.kind == MARKET and self.aggressor != aggressor_for(self.side):
            raise ValueError(f"aggressor inconsistent with side: {self}")

    def as_market(self) -> "OrderEvent":
        return OrderEvent(self.t, MARKET, self.side, self.price, self.qty, aggressor_for(self.side), self.level)


def aggressor_for(side: str) -> str:
    # consuming ask liquidity means a buyer initiated the trade
    return BUY if side == "A" else SELL


@dataclass(frozen=True, slots=True)
class BookSnapshot:
    """Visible book: ``asks`` ascending and ``bids`` descending, as (price, qty) pairs."""

    depth: int
    asks: tuple = ()
    bids: tuple = ()

    @property
    def best_ask(self) -> int | None:
        return self.asks[0][0] if self.asks else None

    @property
    def best_bid(self) -> int | None:
        return self.bids[0][0] if self.bids else None

    @property
    def mid2(self) -> int | None:
        """Mid-price in half-milli units (bid + ask), exact."""
        if not self.asks or not self.bids:
            return None
        return self.asks[0][0] + self.bids[0][0]

    def side(self, side: str) -> tuple:
        return self.asks if side == "A" else self.bids

    def validate(self) -> None:
        for side, ladder in (("A", self.asks), ("B", self.bids)):
            if len(ladder) > self.depth:
                raise BookError(f"side {side} has {len(ladder)} levels > depth {self.depth}", after=self)
            prices = [p for p, _ in ladder]
            ordered = sorted(prices) if side == "A" else sorted(prices, reverse=True)
            if prices != ordered or len(set(prices)) != len(prices):
                raise BookError(f"side {side} ladder not strictly ordered", after=self)
            if any(q <= 0 for _, q in ladder):
                raise BookError(f"side {side} has non-positive quantity", after=self)
        if self.asks and self.bids and self.bids[0][0] >= self.asks[0][0]:
            raise BookError("crossed book", after=self)


class _Ladder:
    """Mutable one-sided book. Keys are oriented so that a smaller key is a better price."""

    __slots__ = ("sign", "keys", "qty")

    def __init__(self, side: str, entries: Iterable[tuple[int, int]] = ()):
        self.sign = 1 if side == "A" else -1
        self.qty: dict[int, int] = {}
        self.keys: list[int] = []
        for p, q in entries:
            self.qty[p] = q
            self.keys.append(self.sign * p)
        self.keys.sort()

    def set_level(self, level: int, price: int, qty: int, depth: int) -> None:
        keys = self.keys
        k = self.sign * price
        if price in self.qty:
            del self.qty[price]
            keys.pop(bisect.bisect_left(keys, k))
        n_better = bisect.bisect_left(keys, k)
        if n_better > level - 1:
            for dropped in keys[level - 1:n_better]:
                del self.qty[self.sign * dropped]
            del keys[level - 1:n_better]
        if qty > 0:
            keys.insert(bisect.bisect_left(keys, k), k)
            self.qty[price] = qty
        else:
            # an empty level L means nothing is visible from L onwards
            for dropped in keys[level - 1:]:
                del self.qty[self.sign * dropped]
            del keys[level - 1:]
        if len(keys) > depth:
            for dropped in keys[depth:]:
                del self.qty[self.sign * dropped]
            del keys[depth:]

    def ladder(self) -> tuple:
        s = self.sign
        return tuple((s * k, self.qty[s * k]) for k in self.keys)


def group_update_batches(records: Sequence[QuoteRecord]) -> list[list[QuoteRecord]]:
    """Group consecutive records sharing a timestamp."""
    return [list(g) for _, g in groupby(records, key=lambda r: r.t)]


def apply_batch(snapshot: BookSnapshot, batch: Sequence[QuoteRecord]) -> BookSnapshot:
    if not batch:
        return snapshot
    asks = _Ladder("A", snapshot.asks)
    bids = _Ladder("B", snapshot.bids)
    for r in batch:
        (asks if r.side == "A" else bids).set_level(r.level, r.price, r.qty, snapshot.depth)
    out = BookSnapshot(snapshot.depth, asks.ladder(), bids.ladder())
    try:
        out.validate()
    except BookError as exc:
        raise BookError(f"{exc} at t={format_time(batch[0].t)}", before=snapshot, after=out) from None
    return out


def _diff_side(side: str, prev: tuple, nxt: tuple, depth: int, t: int) -> list[OrderEvent]:
    if prev == nxt:
        return []
    sign = 1 if side == "A" else -1
    prev_q = dict(prev)
    next_q = dict(nxt)
    prev_rank = {p: i + 1 for i, (p, _) in enumerate(prev)}
    next_rank = {p: i + 1 for i, (p, _) in enumerate(nxt)}
    prev_deepest = prev[-1][0] if prev else None
    next_deepest = nxt[-1][0] if nxt else None
    prev_full = len(prev) >= depth
    next_full = len(nxt) >= depth
    events = []
    for p in sorted(set(prev_q) | set(next_q), key=lambda x: sign * x):
        before = prev_q.get(p)
        after = next_q.get(p)
        if before is None:
            # newly visible because the window moved outward
            if prev_full and sign * p > sign * prev_deepest:
                continue
            events.append(OrderEvent(t, LIMIT, side, p, after, level=next_rank[p]))
        elif after is None:
            # left the window because it shrank at the deep end
            if next_full and sign * p > sign * next_deepest:
                continue
            events.append(OrderEvent(t, CANCEL, side, p, before, level=prev_rank[p]))
        elif after > before:
            events.append(OrderEvent(t, LIMIT, side, p, after - before, level=next_rank[p]))
        elif after < before:
            events.append(OrderEvent(t, CANCEL, side, p, before - after, level=prev_rank[p]))
    return events


def diff_snapshots(prev: BookSnapshot, nxt: BookSnapshot, t: int, sides: Iterable[str] = ("A", "B")) -> list[OrderEvent]:
    events = []
    for side in sides:
        events.extend(_diff_side(side, prev.side(side), nxt.side(side), prev.depth, t))
    return events


@dataclass
class TopOfBook:
    """Best quotes after each update batch; the series used for trade signing."""

    t: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def mid2(self) -> np.ndarray:
        return self.bid + self.ask


@dataclass
class EventFlow:
    events: list[OrderEvent]
    tops: TopOfBook
    snapshots: list[tuple[int, BookSnapshot]] | None = None
    init_time: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def replace_events(self, events: list[OrderEvent]) -> "EventFlow":
        return EventFlow(events, self.tops, self.snapshots, dict(self.init_time), list(self.warnings))


def quotes_to_eventflow(records: Sequence[QuoteRecord], depth: int = 10, keep_snapshots: bool = False) -> EventFlow:
    """Convert a quotes stream into LIMIT/CANCEL events.

    A side is initialized by the first lines that together set each of its
    levels 1..depth; until then its lines only build the initial book. Lines
    arriving after initialization are grouped by timestamp into update batches.
    """
    asks = _Ladder("A")
    bids = _Ladder("B")
    seen = {"A": set(), "B": set()}
    ready = {"A": False, "B": False}
    init_time: dict[str, int] = {}
    warnings: list[str] = []
    events: list[OrderEvent] = []
    snapshots: list[tuple[int, BookSnapshot]] | None = [] if keep_snapshots else None
    top_t: list[int] = []
    top_b: list[int] = []
    top_a: list[int] = []
    full_levels = set(range(1, depth + 1))
    snap = BookSnapshot(depth)

    def record(t: int, s: BookSnapshot) -> None:
        if snapshots is not None:
            snapshots.append((t, s))
        if s.asks and s.bids:
            top_t.append(t)
            top_b.append(s.bids[0][0])
            top_a.append(s.asks[0][0])

    for t, group in groupby(records, key=lambda r: r.t):
        batch = []
        for r in group:
            if ready[r.side]:
                batch.append(r)
                continue
            (asks if r.side == "A" else bids).set_level(r.level, r.price, r.qty, depth)
            seen[r.side].add(r.level)
            if seen[r.side] >= full_levels:
                ready[r.side] = True
                init_time[r.side] = t
                if batch:
                    warnings.append(f"updates before full initialization of side {r.side} at {format_time(t)}")
        # initialization lines are not orders: fold them into the reference state
        init_snap = BookSnapshot(depth, asks.ladder(), bids.ladder())
        if init_snap != snap:
            snap = init_snap
            if not batch:
                snap.validate()
                record(t, snap)
        if not batch:
            continue
        nxt = apply_batch(snap, batch)
        events.extend(diff_snapshots(snap, nxt, t, sides=sorted({r.side for r in batch})))
        snap = nxt
        asks = _Ladder("A", snap.asks)
        bids = _Ladder("B", snap.bids)
        record(t, snap)

    tops = TopOfBook(np.asarray(top_t, dtype=np.int64), np.asarray(top_b, dtype=np.int64), np.asarray(top_a, dtype=np.int64))
    return EventFlow(events, tops, snapshots, init_time, warnings)


EVENT_HEADER = "timestamp,kind,side,price,qty,aggressor"


def write_events(events: Iterable[OrderEvent]) -> bytes:
    buf = io.StringIO()
    buf.write(EVENT_HEADER + "\n")
    for e in events:
        buf.write(f"{format_time(e.t)},{e.kind},{e.side},{format_price(e.price)},{e.qty},{e.aggressor or ''}\n")
    return buf.getvalue().encode("utf-8")


def write_snapshots(snapshots: Iterable[tuple[int, BookSnapshot]]) -> bytes:
    """Debug dump: one row per (time, side, level)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "side", "level", "price", "qty"])
    for t, s in snapshots:
        for side in ("A", "B"):
            for i, (p, q) in enumerate(s.side(side), start=1):
                w.writerow([format_time(t), side, i, format_price(p), q])
    return buf.getvalue().encode("utf-8")
