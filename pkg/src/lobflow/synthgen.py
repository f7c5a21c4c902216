"""Synthetic ground-truth order flow and its rendering as trades/quotes files.

``simulate`` runs a small book driven by homogeneous Poisson event streams and
records the visible book after every event, which is already the quotes file.
``render`` turns the true market orders into trades-file lines, adding the feed
artifacts under study: reporting lag of quotes behind trades, splitting of one
order into several lines, hidden-liquidity (iceberg) executions and off-book
prints.

Every event gets its own millisecond, so each quotes batch is one true event.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .lob import BUY, CANCEL, LIMIT, MARKET, SELL, OrderEvent
from .skellam import LagDensity, SkellamParams
from .tickdata import QuoteRecord, TradeRecord, write_quotes, write_trades

EVENT_LABEL = "EVENT"
ICEBERG_RESIDUAL = "ICEBERG_RESIDUAL"
OFF_BOOK = "OFF_BOOK"

REGIMES = ("one_tick", "relaxed")


@dataclass
class FlowParams:
    # mid-moving limit/cancel events per side (events/s)
    lambda_lc_plus: float = 5.0
    lambda_lc_minus: float = 5.0
    # market orders per side (events/s)
    lambda_m_plus: float = 1.0
    lambda_m_minus: float = 1.0
    rho_agg: float = 0.6
    # queue-size changes at visible levels that leave the mid unchanged (events/s)
    noise_rate: float = 2.0
    horizon: float = 3600.0
    start: float = 32700.0
    tick: int = 5
    depth: int = 10
    initial_bid: int = 27500
    queue_min: int = 100
    queue_max: int = 3000
    noise_qty_max: int = 500
    regime: str = "one_tick"
    seed: int = 0

    def __post_init__(self):
        rates = (self.lambda_lc_plus, self.lambda_lc_minus, self.lambda_m_plus, self.lambda_m_minus, self.noise_rate)
        if any(r < 0 for r in rates):
            raise ValueError("rates must be >= 0")
        if not 0 <= self.rho_agg <= 1:
            raise ValueError("rho_agg must be in [0, 1]")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.depth < 1 or self.tick < 1 or self.queue_min < 2 or self.queue_max < self.queue_min:
            raise ValueError("invalid book geometry")
        if self.initial_bid - (self.depth + 8) * self.tick <= 0:
            raise ValueError("initial_bid too low for the book depth")

    @classmethod
    def from_skellam(cls, params: SkellamParams, **kw) -> "FlowParams":
        """Simulator rates whose mid-move intensities equal the toy model's.

        The model counts every market order in the up/down move intensity while
        only a ``rho_agg`` share of them moves the mid here, so the remainder is
        added to the limit/cancel move rate.
        """
        passive = 1.0 - params.rho_agg
        return cls(
            lambda_lc_plus=params.lambda_lc_plus + passive * params.lambda_m_plus,
            lambda_lc_minus=params.lambda_lc_minus + passive * params.lambda_m_minus,
            lambda_m_plus=params.lambda_m_plus,
            lambda_m_minus=params.lambda_m_minus,
            rho_agg=params.rho_agg,
            **kw,
        )


@dataclass
class ArtifactConfig:
    lag_density: LagDensity = field(default_factory=lambda: LagDensity.uniform(0.05, 0.15))
    split_min: int = 1
    split_max: int = 1
    split_jitter: float = 0.0
    iceberg_fraction: float = 0.0
    iceberg_min_qty: int = 0
    offbook_fraction: float = 0.0

    def __post_init__(self):
        if not 1 <= self.split_min <= self.split_max:
            raise ValueError("need 1 <= split_min <= split_max")
        if self.split_jitter < 0:
            raise ValueError("split_jitter must be >= 0")
        for name in ("iceberg_fraction", "offbook_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.offbook_fraction >= 1:
            raise ValueError("offbook_fraction must be < 1")

    @classmethod
    def perfect(cls) -> "ArtifactConfig":
        return cls(lag_density=LagDensity.dirac(0.0))


@dataclass
class MarketOrder:
    event: int          # index into GroundTruth.events
    t: int              # time of the book update (ms)
    side: str           # side of the book consumed
    price: int
    qty: int
    aggressive: bool


@dataclass
class GroundTruth:
    params: FlowParams
    events: list[OrderEvent]
    market_orders: list[MarketOrder]
    quotes: list[QuoteRecord]
    mid_t: np.ndarray
    mid_bid: np.ndarray
    mid_ask: np.ndarray

    @property
    def mid2(self) -> np.ndarray:
        return self.mid_bid + self.mid_ask


@dataclass
class TradeLine:
    label: str
    event: int          # index into GroundTruth.events, -1 for off-book lines
    order: int          # index into GroundTruth.market_orders, -1 for off-book lines


@dataclass
class Feed:
    truth: GroundTruth
    artifacts: ArtifactConfig
    trades: list[TradeRecord]
    lines: list[TradeLine]
    lags_ms: np.ndarray

    @property
    def quotes(self) -> list[QuoteRecord]:
        return self.truth.quotes

    def trades_bytes(self) -> bytes:
        return write_trades(self.trades)

    def quotes_bytes(self) -> bytes:
        return write_quotes(self.truth.quotes)

    def labels_bytes(self) -> bytes:
        buf = io.StringIO()
        buf.write("trade_line,label,event_id\n")
        for i, ln in enumerate(self.lines):
            buf.write(f"{i},{ln.label},{ln.event if ln.event >= 0 else ''}\n")
        return buf.getvalue().encode("utf-8")

    def lines_with(self, *labels: str) -> set[int]:
        return {i for i, ln in enumerate(self.lines) if ln.label in labels}


# -- simulation ----------------------------------------------------------------------

class _Book:
    """Both sides as best-first lists of [price, qty]; deeper than the visible window."""

    def __init__(self, p: FlowParams, rng: np.random.Generator):
        self.p = p
        self.rng = rng
        self.keep = p.depth + 6
        bid0 = p.initial_bid
        ask0 = bid0 + p.tick
        self.asks = [[ask0 + i * p.tick, self._queue()] for i in range(self.keep)]
        self.bids = [[bid0 - i * p.tick, self._queue()] for i in range(self.keep)]

    def _queue(self) -> int:
        return int(self.rng.integers(self.p.queue_min, self.p.queue_max + 1))

    def side(self, s: str) -> list:
        return self.asks if s == "A" else self.bids

    def visible(self, s: str) -> list[tuple[int, int]]:
        return [(pr, q) for pr, q in self.side(s)[: self.p.depth]]

    def replenish(self) -> None:
        # hidden deep levels only; they never produce events
        for s, sign in (("A", 1), ("B", -1)):
            lad = self.side(s)
            while len(lad) < self.keep:
                gap = 1 if self.p.regime == "one_tick" else int(self.rng.integers(1, 3))
                lad.append([lad[-1][0] + sign * gap * self.p.tick, self._queue()])
            del lad[self.keep + 4:]


def _ladder_lines(t: int, side: str, before: list, after: list) -> list[QuoteRecord]:
    out = []
    for i, pq in enumerate(after):
        if i >= len(before) or before[i] != pq:
            out.append(QuoteRecord(t, side, i + 1, pq[0], pq[1]))
    return out


def _event_times(rng: np.random.Generator, rate: float, p: FlowParams) -> np.ndarray:
    n = int(rng.poisson(rate * p.horizon)) if rate > 0 else 0
    u = np.sort(rng.random(n)) * p.horizon
    t = np.floor((p.start + u) * 1000.0).astype(np.int64) + 1
    t0 = int(round(p.start * 1000))
    t = np.maximum(t, t0 + 1)
    # one event per millisecond: bump collisions forward
    k = np.arange(n, dtype=np.int64)
    return np.maximum.accumulate(t - k) + k if n else t


def simulate(p: FlowParams) -> GroundTruth:
    rng = np.random.default_rng(np.random.PCG64(p.seed))
    book = _Book(p, rng)
    t0 = int(round(p.start * 1000))
    quotes: list[QuoteRecord] = []
    for s in ("A", "B"):
        for i, (pr, q) in enumerate(book.visible(s)):
            quotes.append(QuoteRecord(t0, s, i + 1, pr, q))
    events: list[OrderEvent] = []
    mos: list[MarketOrder] = []
    mid_t = [t0]
    mid_b = [book.bids[0][0]]
    mid_a = [book.asks[0][0]]

    kinds = ("lc_up", "lc_down", "m_buy", "m_sell", "noise")
    rates = np.array([p.lambda_lc_plus, p.lambda_lc_minus, p.lambda_m_plus, p.lambda_m_minus, p.noise_rate])
    total = rates.sum()
    times = _event_times(rng, total, p)
    n = len(times)
    choice = rng.choice(len(kinds), size=n, p=rates / total) if n else np.zeros(0, dtype=int)
    u = rng.random((n, 4))
    tick = p.tick

    def fresh() -> int:
        return int(rng.integers(p.queue_min, p.queue_max + 1))

    for i in range(n):
        t = int(times[i])
        kind = kinds[choice[i]]
        ui = u[i]
        before_a = book.visible("A")
        before_b = book.visible("B")
        asks, bids = book.asks, book.bids

        if kind in ("lc_up", "lc_down"):
            if p.regime == "one_tick":
                # the whole best queue on one side goes and the other side follows by one tick
                lose, gain = (asks, bids) if kind == "lc_up" else (bids, asks)
                ls, gs = ("A", "B") if kind == "lc_up" else ("B", "A")
                price, qty = lose.pop(0)
                events.append(OrderEvent(t, CANCEL, ls, price, qty, level=1))
                q = fresh()
                gain.insert(0, [price, q])
                events.append(OrderEvent(t, LIMIT, gs, price, q, level=1))
            else:
                _relaxed_move(book, kind, ui, t, events, fresh)
        elif kind in ("m_buy", "m_sell"):
            s = "A" if kind == "m_buy" else "B"
            lad = book.side(s)
            price, queue = lad[0]
            aggressive = ui[0] < p.rho_agg or queue < 2
            if aggressive:
                qty = queue
                lad.pop(0)
                idx = len(events)
                events.append(OrderEvent(t, MARKET, s, price, qty, BUY if s == "A" else SELL, level=1))
                if p.regime == "one_tick":
                    other = "B" if s == "A" else "A"
                    q = fresh()
                    book.side(other).insert(0, [price, q])
                    events.append(OrderEvent(t, LIMIT, other, price, q, level=1))
            else:
                qty = 1 + int(ui[1] * (queue - 1))
                lad[0][1] = queue - qty
                idx = len(events)
                events.append(OrderEvent(t, MARKET, s, price, qty, BUY if s == "A" else SELL, level=1))
            mos.append(MarketOrder(idx, t, s, price, qty, aggressive))
        else:
            s = "A" if ui[0] < 0.5 else "B"
            lad = book.side(s)
            lvl = int(ui[1] * p.depth)
            price, queue = lad[lvl]
            if ui[2] < 0.5 or queue < 2:
                q = 1 + int(ui[3] * p.noise_qty_max)
                lad[lvl][1] = queue + q
                events.append(OrderEvent(t, LIMIT, s, price, q, level=lvl + 1))
            else:
                q = 1 + int(ui[3] * min(p.noise_qty_max, queue - 1))
                lad[lvl][1] = queue - q
                events.append(OrderEvent(t, CANCEL, s, price, q, level=lvl + 1))

        book.replenish()
        after_a = book.visible("A")
        after_b = book.visible("B")
        quotes.extend(_ladder_lines(t, "A", before_a, after_a))
        quotes.extend(_ladder_lines(t, "B", before_b, after_b))
        if after_a[0][0] != mid_a[-1] or after_b[0][0] != mid_b[-1]:
            mid_t.append(t)
            mid_a.append(after_a[0][0])
            mid_b.append(after_b[0][0])

    return GroundTruth(p, events, mos, quotes, np.asarray(mid_t, dtype=np.int64),
                       np.asarray(mid_b, dtype=np.int64), np.asarray(mid_a, dtype=np.int64))


def _relaxed_move(book: _Book, kind: str, ui, t: int, events: list, fresh) -> None:
    """Relaxed regime: a full level vanishes or a new price level appears, anywhere in view."""
    p = book.p
    s = "A" if ui[0] < 0.5 else "B"
    lad = book.side(s)
    sign = 1 if s == "A" else -1
    if kind == "lc_down" and len(lad) > 1:
        lvl = int(ui[1] * p.depth)
        price, qty = lad.pop(lvl)
        events.append(OrderEvent(t, CANCEL, s, price, qty, level=lvl + 1))
        return
    # new level at an empty grid price strictly inside the visible range
    opp_best = book.side("B" if s == "A" else "A")[0][0]
    deepest = lad[p.depth - 1][0]
    taken = {pr for pr, _ in lad}
    lo = opp_best + sign * p.tick
    free = [x for x in range(lo, deepest, sign * p.tick) if x not in taken]
    if not free:
        lvl = int(ui[1] * p.depth)
        q = fresh()
        lad[lvl][1] += q
        events.append(OrderEvent(t, LIMIT, s, lad[lvl][0], q, level=lvl + 1))
        return
    price = free[int(ui[2] * len(free))]
    q = fresh()
    pos = sum(1 for pr, _ in lad if sign * pr < sign * price)
    lad.insert(pos, [price, q])
    events.append(OrderEvent(t, LIMIT, s, price, q, level=pos + 1))


# -- rendering -------------------------------------------------------------------------

def _split(rng: np.random.Generator, total: int, k: int, min_part: int = 1) -> list[int]:
    """Random composition of ``total`` into ``k`` parts, each >= min_part."""
    spare = total - k * min_part
    cuts = np.sort(rng.integers(0, spare + 1, size=k - 1))
    bounds = np.concatenate([[0], cuts, [spare]])
    return [int(x) + min_part for x in np.diff(bounds)]


def render(truth: GroundTruth, artifacts: ArtifactConfig, seed: int = 0) -> Feed:
    rng = np.random.default_rng(np.random.PCG64([seed, 1]))
    p = truth.params
    mos = truth.market_orders
    n = len(mos)
    lags_ms = np.round(artifacts.lag_density.sample(rng, n) * 1000.0).astype(np.int64)
    jitter_ms = int(round(artifacts.split_jitter * 1000))

    groups = []  # (sort key, tie key, [(TradeRecord, TradeLine)])
    for j, mo in enumerate(mos):
        k = int(rng.integers(artifacts.split_min, artifacts.split_max + 1))
        iceberg = (artifacts.iceberg_fraction > 0 and mo.qty >= artifacts.iceberg_min_qty
                   and rng.random() < artifacts.iceberg_fraction)
        if iceberg:
            # the print includes hidden shares refilled at the touch, so the
            # visible decrease is smaller than any contiguous run of lines
            k = max(1, min(k, mo.qty // 2))
            hidden = int(rng.integers(1, max(1, mo.qty // (2 * k)) + 1))
            size = mo.qty + hidden
            parts = _split(rng, size, k, hidden + 1)
            label = ICEBERG_RESIDUAL
        else:
            k = min(k, mo.qty)
            parts = _split(rng, mo.qty, k)
            label = EVENT_LABEL
        t_first = mo.t - int(lags_ms[j])
        offs = [0] + sorted(int(x) for x in rng.integers(0, jitter_ms + 1, size=k - 1)) if jitter_ms else [0] * k
        lines = [(TradeRecord(t_first + o, mo.price, q), TradeLine(label, mo.event, j)) for o, q in zip(offs, parts)]
        groups.append((t_first, mo.t, lines))

    if artifacts.offbook_fraction > 0:
        n_true = sum(len(g[2]) for g in groups)
        f = artifacts.offbook_fraction
        n_off = int(rng.binomial(n_true, f / (1 - f))) if n_true else 0
        lo = int(round(p.start * 1000)) + 1
        hi = lo + int(round(p.horizon * 1000))
        for t in np.sort(rng.integers(lo, hi, size=n_off)):
            t = int(t)
            i = max(0, int(np.searchsorted(truth.mid_t, t, side="right")) - 1)
            best = int(truth.mid_ask[i]) if rng.random() < 0.5 else int(truth.mid_bid[i])
            price = best + (p.tick if rng.random() < 0.5 else -p.tick)
            qty = int(rng.integers(1, p.queue_max + 1))
            groups.append((t, t, [(TradeRecord(t, price, qty), TradeLine(OFF_BOOK, -1, -1))]))

    groups.sort(key=lambda g: (g[0], g[1]))
    trades = [tr for g in groups for tr, _ in g[2]]
    lines = [ln for g in groups for _, ln in g[2]]
    return Feed(truth, artifacts, trades, lines, lags_ms)


# -- scenario files ----------------------------------------------------------------

def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def parse_lag_density(text: str) -> LagDensity:
    """``dirac:0.1``, ``gaussian:1,0.1``, ``uniform:0.05,0.15`` or ``empirical:e0,e1,...;c0,c1,...``."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower()
    if kind == "dirac":
        return LagDensity.dirac(float(rest))
    if kind == "gaussian":
        m, s = (float(x) for x in rest.split(","))
        return LagDensity.gaussian(m, s)
    if kind == "uniform":
        lo, hi = (float(x) for x in rest.split(","))
        return LagDensity.uniform(lo, hi)
    if kind == "empirical":
        e, c = rest.split(";")
        return LagDensity.empirical([float(x) for x in e.split(",")], [float(x) for x in c.split(",")])
    raise ValueError(f"unknown lag density {text!r}")


def format_lag_density(d: LagDensity) -> str:
    if d.kind == "DIRAC":
        return f"dirac:{d.value!r}"
    if d.kind == "GAUSSIAN":
        return f"gaussian:{d.mean!r},{d.sd!r}"
    return "empirical:" + ",".join(repr(float(e)) for e in d.edges) + ";" + ",".join(repr(float(w)) for w in d.weights)


def load_scenario(text: str) -> tuple[FlowParams, ArtifactConfig]:
    """Flat ``key = value`` scenario; keys are FlowParams and ArtifactConfig field names."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[scenario]\n" + text)
    raw = dict(cp["scenario"])
    flow_kw, art_kw = {}, {}
    flow_defaults = FlowParams()
    art_defaults = ArtifactConfig()
    flow_names = {f.name for f in fields(FlowParams)}
    art_names = {f.name for f in fields(ArtifactConfig)}
    for key, value in raw.items():
        if key in flow_names:
            flow_kw[key] = _coerce(value, getattr(flow_defaults, key))
        elif key == "lag_density":
            art_kw[key] = parse_lag_density(value)
        elif key in art_names:
            art_kw[key] = _coerce(value, getattr(art_defaults, key))
        else:
            raise KeyError(f"unknown scenario key {key!r}")
    return FlowParams(**flow_kw), ArtifactConfig(**art_kw)


def dump_scenario(flow: FlowParams, art: ArtifactConfig) -> str:
    lines = [f"{k} = {v}" for k, v in asdict(flow).items()]
    for f in fields(ArtifactConfig):
        v = getattr(art, f.name)
        lines.append(f"{f.name} = {format_lag_density(v) if f.name == 'lag_density' else v}")
    return "\n".join(lines) + "\n"


def read_scenario(path) -> tuple[FlowParams, ArtifactConfig]:
    return load_scenario(Path(path).read_text())
