"""Matching of "trades" lines against CANCEL events of a reconstructed flow.

Three procedures share one engine:

* M1 matches each trade line alone against a CANCEL of equal price and size
  within +-delta, closest in time first.
* M2 groups consecutive lines with the same price and timestamp (at most
  ``max_batch`` lines) and tries every split of the batch into contiguous
  groups, keeping the split that matches the most lines.
* M3 is M2 where a batch also admits lines within ``batch_window`` of the
  batch's first timestamp.

Lines are consumed greedily in file order. After a batch is resolved,
everything up to its last matched group is committed and the search resumes on
the next line, so lines left unmatched at the tail of a batch get a second
chance as the head of the next one.
"""

from __future__ import annotations

import bisect
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .lob import CANCEL, EventFlow, OrderEvent, write_events
from .tickdata import TradeRecord

SCHEMA_VERSION = 1
PROCEDURES = ("M1", "M2", "M3")


def seconds_to_ms(x: float) -> int:
    return int(round(x * 1000))


@dataclass(frozen=True)
class MatchConfig:
    delta: float = 0.4
    max_batch: int = 9
    batch_window: float = 0.005
    procedure: str = "M3"

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise ValueError(f"unknown procedure {self.procedure!r}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.batch_window < 0:
            raise ValueError("batch_window must be >= 0")
        if self.procedure == "M3" and self.batch_window == 0:
            raise ValueError("M3 needs batch_window > 0 (use M2 for an exact-timestamp batch)")

    @property
    def effective_max_batch(self) -> int:
        return 1 if self.procedure == "M1" else self.max_batch

    @property
    def effective_batch_window(self) -> float:
        return self.batch_window if self.procedure == "M3" else 0.0


@dataclass
class MatchResult:
    trades: list[TradeRecord]
    flow: EventFlow
    # trade line index -> (event index, lag in ms measured from the group's first line)
    assignments: dict[int, tuple[int, int]]
    groups: list[tuple[tuple[int, ...], int, int]]
    unmatched: list[int]
    config: MatchConfig | None = None

    @property
    def matched_trades(self) -> int:
        return len(self.assignments)

    @property
    def unmatched_trades(self) -> list[TradeRecord]:
        return [self.trades[i] for i in self.unmatched]

    @property
    def market_events(self) -> list[OrderEvent]:
        return [self.flow.events[e] for _, e, _ in self.groups]


class _CancelIndex:
    def __init__(self, events: Sequence[OrderEvent]):
        by_key: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
        by_price: dict[int, list[int]] = defaultdict(list)
        for idx, e in enumerate(events):
            if e.kind == CANCEL:
                by_key[(e.price, e.qty)].append((e.t, idx))
                by_price[e.price].append(e.t)
        for v in by_key.values():
            v.sort()
        for v in by_price.values():
            v.sort()
        self.by_key = by_key
        self.by_price = by_price
        self.consumed: set[int] = set()

    def any_at_price(self, price: int, lo: int, hi: int) -> bool:
        times = self.by_price.get(price)
        if not times:
            return False
        i = bisect.bisect_left(times, lo)
        return i < len(times) and times[i] <= hi

    def candidates(self, price: int, qty: int, t: int, delta: int) -> list[tuple[int, int, int]]:
        """Unconsumed candidates as (|lag|, time, event index), best first."""
        entries = self.by_key.get((price, qty))
        if not entries:
            return []
        i = bisect.bisect_left(entries, (t - delta, -1))
        out = []
        while i < len(entries) and entries[i][0] <= t + delta:
            et, idx = entries[i]
            if idx not in self.consumed:
                out.append((abs(et - t), et, idx))
            i += 1
        out.sort()
        return out


def _compositions(k: int):
    """All splits of k consecutive lines into contiguous groups, as (start, end) lists."""
    for mask in range(1 << (k - 1)):
        groups = []
        start = 0
        for cut in range(k - 1):
            if mask >> cut & 1:
                groups.append((start, cut + 1))
                start = cut + 1
        groups.append((start, k))
        yield groups


def _run(trades: Sequence[TradeRecord], flow: EventFlow, delta: float, max_batch: int,
         batch_window: float, config: MatchConfig | None) -> MatchResult:
    d = seconds_to_ms(delta)
    w = seconds_to_ms(batch_window)
    index = _CancelIndex(flow.events)
    n = len(trades)
    assignments: dict[int, tuple[int, int]] = {}
    groups_out: list[tuple[tuple[int, ...], int, int]] = []
    unmatched: list[int] = []

    start = 0
    while start < n:
        first = trades[start]
        end = start + 1
        while (end < n and end - start < max_batch and trades[end].price == first.price
               and abs(trades[end].t - first.t) <= w):
            end += 1
        k = end - start
        t_lo = min(trades[i].t for i in range(start, end))
        t_hi = max(trades[i].t for i in range(start, end))
        if not index.any_at_price(first.price, t_lo - d, t_hi + d):
            unmatched.append(start)
            start += 1
            continue

        seg_cache: dict[tuple[int, int], list] = {}

        def seg_candidates(a: int, b: int):
            key = (a, b)
            if key not in seg_cache:
                qty = sum(trades[start + i].qty for i in range(a, b))
                seg_cache[key] = index.candidates(first.price, qty, trades[start + a].t, d)
            return seg_cache[key]

        best_score = None
        best_plan = None
        for comp in _compositions(k):
            used: set[int] = set()
            plan = []
            lines = 0
            lead = 0  # lines in the matched run that starts the batch
            lag_sum = 0
            for a, b in comp:
                for absdt, et, idx in seg_candidates(a, b):
                    if idx not in used:
                        used.add(idx)
                        plan.append((a, b, idx, et - trades[start + a].t))
                        lines += b - a
                        lag_sum += absdt
                        if lead == a:
                            lead = b
                        break
            if not plan:
                continue
            # only the leading run is committed; lines after a gap are batched again
            score = (lead, lines, -lag_sum, -len(comp))
            if best_score is None or score > best_score:
                best_score = score
                best_plan = plan

        if best_plan is None:
            unmatched.append(start)
            start += 1
            continue

        # keep only the groups that tile the batch from its first line; the
        # rest is batched again from the first line left over
        best_plan.sort()
        done = 0
        for a, b, idx, lag in best_plan:
            if a != done:
                break
            index.consumed.add(idx)
            line_ids = tuple(range(start + a, start + b))
            for li in line_ids:
                assignments[li] = (idx, lag)
            groups_out.append((line_ids, idx, lag))
            done = b
        if done == 0:
            unmatched.append(start)
            done = 1
        start += done

    events = list(flow.events)
    for idx in index.consumed:
        events[idx] = events[idx].as_market()
    unmatched.sort()
    return MatchResult(list(trades), flow.replace_events(events), assignments, groups_out, unmatched, config)


def match1(trades: Sequence[TradeRecord], flow: EventFlow, delta: float = 0.4) -> MatchResult:
    return _run(trades, flow, delta, 1, 0.0, MatchConfig(delta, 1, 0.0, "M1"))


def match2(trades: Sequence[TradeRecord], flow: EventFlow, delta: float = 0.4, max_batch: int = 9) -> MatchResult:
    return _run(trades, flow, delta, max_batch, 0.0, MatchConfig(delta, max_batch, 0.0, "M2"))


def match3(trades: Sequence[TradeRecord], flow: EventFlow, delta: float = 0.4, max_batch: int = 9,
           batch_window: float = 0.005) -> MatchResult:
    cfg = MatchConfig(delta, max_batch, batch_window, "M3") if batch_window > 0 else MatchConfig(delta, max_batch, 0.0, "M2")
    return _run(trades, flow, delta, max_batch, batch_window, cfg)


def match(trades: Sequence[TradeRecord], flow: EventFlow, config: MatchConfig) -> MatchResult:
    return _run(trades, flow, config.delta, config.effective_max_batch, config.effective_batch_window, config)


# -- reporting ---------------------------------------------------------------

def ks_2samp_statistic(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Two-sample Kolmogorov-Smirnov statistic sup|F_x - F_y|; None if a sample is empty."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        return None
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / x.size
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


@dataclass
class Histogram:
    edges: list[float]
    counts: list[int]

    @classmethod
    def of(cls, values, edges) -> "Histogram":
        counts, edges = np.histogram(np.asarray(values, dtype=float), bins=np.asarray(edges, dtype=float))
        return cls([float(e) for e in edges], [int(c) for c in counts])

    @property
    def total(self) -> int:
        return sum(self.counts)


def _size_edges(sizes) -> np.ndarray:
    top = max([1, *sizes])
    n = int(np.ceil(np.log10(top + 1) * 4)) + 1
    return np.unique(np.floor(np.logspace(0, np.log10(top + 1), n + 1)))


def _time_edges() -> np.ndarray:
    # 15-minute bins over the whole day, in seconds since midnight
    return np.arange(0, 86400 + 1, 900)


@dataclass
class MatchReport:
    total_trades: int
    matched_trades: int
    matched_fraction: float | None
    lag_histogram: Histogram
    unmatched_size_histogram: Histogram
    unmatched_time_histogram: Histogram
    matched_size_histogram: Histogram
    ks_statistic_sizes: float | None
    matched_mean_size: float | None
    unmatched_mean_size: float | None
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def histograms_csv(self) -> bytes:
        buf = io.StringIO()
        buf.write("histogram,lo,hi,count\n")
        for name in ("lag_histogram", "matched_size_histogram", "unmatched_size_histogram", "unmatched_time_histogram"):
            h = getattr(self, name)
            for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                buf.write(f"{name},{lo:g},{hi:g},{c}\n")
        return buf.getvalue().encode("utf-8")


def build_report(result: MatchResult, reference_matched_sizes: Sequence[int] | None = None,
                 lag_bin_ms: int = 5) -> MatchReport:
    total = len(result.trades)
    matched = result.matched_trades
    matched_sizes = [result.trades[i].qty for i in sorted(result.assignments)]
    ref = list(reference_matched_sizes) if reference_matched_sizes is not None else matched_sizes
    unmatched = result.unmatched_trades
    u_sizes = [t.qty for t in unmatched]
    u_times = [t.t / 1000.0 for t in unmatched]
    lags = [lag for _, lag in result.assignments.values()]
    cfg = result.config or MatchConfig()
    d = seconds_to_ms(cfg.delta + cfg.effective_batch_window)
    half = max(lag_bin_ms, ((d + lag_bin_ms - 1) // lag_bin_ms) * lag_bin_ms)
    lag_edges = np.arange(-half, half + lag_bin_ms, lag_bin_ms)
    size_edges = _size_edges(ref + u_sizes)
    return MatchReport(
        total_trades=total,
        matched_trades=matched,
        matched_fraction=matched / total if total else None,
        lag_histogram=Histogram.of(lags, lag_edges),
        unmatched_size_histogram=Histogram.of(u_sizes, size_edges),
        unmatched_time_histogram=Histogram.of(u_times, _time_edges()),
        matched_size_histogram=Histogram.of(ref, size_edges),
        ks_statistic_sizes=ks_2samp_statistic(ref, u_sizes),
        matched_mean_size=float(np.mean(ref)) if ref else None,
        unmatched_mean_size=float(np.mean(u_sizes)) if u_sizes else None,
        config=asdict(cfg),
        metadata={"lag_reference": "first trade line of each matched group",
                  "lag_units": "ms", "lag_bin_ms": lag_bin_ms},
    )


def export_flow(result: MatchResult) -> bytes:
    return write_events(result.flow.events)
