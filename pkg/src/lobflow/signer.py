"""Trade signs from matching, and the quote-only Lee-Ready classifier."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lob import BUY, SELL, TopOfBook, aggressor_for
from .matcher import MatchResult, seconds_to_ms
from .tickdata import TradeRecord

UNDECIDED = "UNDECIDED"

# lag set used for the per-day optimal lag table
DAILY_LAG_GRID = (-5, -2, -1.5, -1, -0.75, -0.5, -0.2, -0.15, -0.1, -0.05, 0, 0.05, 0.1)


@dataclass
class SignedTrade:
    trade: TradeRecord
    true_sign: str | None
    lr_sign: dict[float, str | None] = field(default_factory=dict)


@dataclass
class SignaturePerformance:
    lag: float
    correct: int
    incorrect: int
    undecided: int
    excluded: int

    @property
    def decided(self) -> int:
        return self.correct + self.incorrect

    @property
    def evaluated(self) -> int:
        return self.correct + self.incorrect + self.undecided

    @property
    def accuracy(self) -> float | None:
        n = self.evaluated
        return self.correct / n if n else None

    @property
    def accuracy_decided(self) -> float | None:
        n = self.decided
        return self.correct / n if n else None


def quote_index(tops: TopOfBook, t_query: int) -> int:
    """Index of the last quote strictly before ``t_query``, or -1.

    A quote update stamped exactly at the query time is treated as not yet
    visible, so the zero-gap case compares against the pre-update book.
    """
    return int(np.searchsorted(tops.t, t_query, side="left")) - 1


def lee_ready_sign(trade: TradeRecord, tops: TopOfBook, lag: float) -> str | None:
    """BUY / SELL / UNDECIDED, or None when no quote exists yet at the query time."""
    i = quote_index(tops, trade.t + seconds_to_ms(lag))
    if i < 0:
        return None
    mid2 = int(tops.bid[i] + tops.ask[i])
    p2 = 2 * trade.price
    if p2 > mid2:
        return BUY
    if p2 < mid2:
        return SELL
    return UNDECIDED


def lee_ready_signs(trades: Sequence[TradeRecord], tops: TopOfBook, lag: float) -> np.ndarray:
    """Vectorized classifier: +1 buy, -1 sell, 0 undecided, 2 no quote available."""
    t = np.fromiter((tr.t for tr in trades), dtype=np.int64, count=len(trades))
    p2 = 2 * np.fromiter((tr.price for tr in trades), dtype=np.int64, count=len(trades))
    idx = np.searchsorted(tops.t, t + seconds_to_ms(lag), side="left") - 1
    out = np.full(len(trades), 2, dtype=np.int8)
    ok = idx >= 0
    mid2 = tops.mid2[idx[ok]]
    out[ok] = np.sign(p2[ok] - mid2).astype(np.int8)
    return out


def true_signs(result: MatchResult) -> list[SignedTrade]:
    out = []
    events = result.flow.events
    for i, tr in enumerate(result.trades):
        a = result.assignments.get(i)
        sign = aggressor_for(events[a[0]].side) if a is not None else None
        out.append(SignedTrade(tr, sign))
    return out


def _true_sign_array(result: MatchResult) -> np.ndarray:
    signs = np.zeros(len(result.trades), dtype=np.int8)
    events = result.flow.events
    for i, (e, _) in result.assignments.items():
        signs[i] = 1 if events[e].side == "A" else -1
    return signs


def sweep(trades: Sequence[TradeRecord], tops: TopOfBook, result: MatchResult | None,
          lags: Sequence[float], signs: Sequence[int] | None = None) -> list[SignaturePerformance]:
    """Accuracy per lag against the matched signs, or against ``signs`` (+1/-1, 0 unknown) if given."""
    if not len(lags):
        raise ValueError("lag grid must be non-empty")
    if signs is not None:
        truth = np.asarray(signs, dtype=np.int8)
        if truth.shape != (len(trades),):
            raise ValueError("one sign per trade line")
    elif result is not None:
        truth = _true_sign_array(result)
    else:
        raise ValueError("need a match result or explicit signs")
    signed = truth != 0
    out = []
    for lag in lags:
        lr = lee_ready_signs(trades, tops, lag)
        has_quote = lr != 2
        pool = signed & has_quote
        correct = int(np.sum(pool & (lr == truth)))
        undecided = int(np.sum(pool & (lr == 0)))
        incorrect = int(np.sum(pool)) - correct - undecided
        excluded = len(trades) - int(np.sum(pool))
        out.append(SignaturePerformance(float(lag), correct, incorrect, undecided, excluded))
    return out


def sign_trades(result: MatchResult, tops: TopOfBook, lags: Sequence[float]) -> list[SignedTrade]:
    signed = true_signs(result)
    for st in signed:
        st.lr_sign = {float(lag): lee_ready_sign(st.trade, tops, lag) for lag in lags}
    return signed


def optimal_lag(perf: Sequence[SignaturePerformance]) -> SignaturePerformance | None:
    """Grid point with the best accuracy; the first one wins ties."""
    best = None
    for p in perf:
        if p.accuracy is not None and (best is None or p.accuracy > best.accuracy):
            best = p
    return best


PERF_HEADER = "lag_seconds,correct,incorrect,undecided,excluded,accuracy"


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def write_performance(perf: Sequence[SignaturePerformance], with_decided: bool = True) -> bytes:
    buf = io.StringIO()
    buf.write(PERF_HEADER + (",accuracy_decided" if with_decided else "") + "\n")
    for p in perf:
        row = f"{p.lag:g},{p.correct},{p.incorrect},{p.undecided},{p.excluded},{_fmt(p.accuracy)}"
        if with_decided:
            row += f",{_fmt(p.accuracy_decided)}"
        buf.write(row + "\n")
    return buf.getvalue().encode("utf-8")


def read_performance(data: bytes) -> list[SignaturePerformance]:
    lines = data.decode("utf-8").splitlines()
    out = []
    for line in lines[1:]:
        f = line.split(",")
        out.append(SignaturePerformance(float(f[0]), int(f[1]), int(f[2]), int(f[3]), int(f[4])))
    return out


def write_optimal_lags(rows: Sequence[tuple[str, SignaturePerformance | None]]) -> bytes:
    buf = io.StringIO()
    buf.write("date,optimal_lag,accuracy\n")
    for date, best in rows:
        if best is None:
            buf.write(f"{date},,\n")
        else:
            buf.write(f"{date},{best.lag:g},{_fmt(best.accuracy)}\n")
    return buf.getvalue().encode("utf-8")
