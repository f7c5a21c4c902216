"""One-dimensional exponential-kernel Hawkes models.

Self-exciting:   lambda(t) = lambda0 + sum_{t_i < t} alpha exp(-beta (t - t_i))
Cross-excited:   same, the sum running over a separate exciting series.

The log-likelihood on [start, end] is computed with the usual O(n) decay
recursion; ``fit`` maximizes it over log-parameters with L-BFGS-B from several
starting points.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import optimize

from .lob import CANCEL, MARKET

TIE_EPS = 1e-6  # seconds added per position inside a group of tied timestamps


@dataclass(frozen=True)
class HawkesParams:
    lambda0: float
    alpha: float
    beta: float

    @property
    def ratio(self) -> float:
        return self.alpha / self.beta


@dataclass
class PointSeries:
    times: np.ndarray
    start: float
    end: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.end < self.start:
            raise ValueError("horizon end before start")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("times must be strictly increasing (use from_timestamps to break ties)")
            if self.times[0] < self.start or self.times[-1] > self.end:
                raise ValueError("times outside the horizon")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def duration(self) -> float:
        return self.end - self.start

    @classmethod
    def from_timestamps(cls, times: Sequence[float], start: float | None = None,
                        end: float | None = None) -> "PointSeries":
        """Sort and spread exact ties by TIE_EPS steps, keeping their order."""
        t = np.sort(np.asarray(times, dtype=float), kind="stable")
        if t.size > 1:
            same = np.concatenate([[False], np.diff(t) <= 0])
            # position inside each run of ties
            run_start = np.maximum.accumulate(np.where(~same, np.arange(t.size), 0))
            t = t + (np.arange(t.size) - run_start) * TIE_EPS
            # a perturbed run may reach the next distinct time; push forward if so
            for i in np.nonzero(np.diff(t) <= 0)[0]:
                t[i + 1] = t[i] + TIE_EPS
        lo = float(t[0]) if start is None and t.size else (start or 0.0)
        hi = float(t[-1]) if end is None and t.size else (end if end is not None else lo)
        return cls(t, lo, max(hi, float(t[-1]) if t.size else hi))

    def shifted(self, offset: float) -> "PointSeries":
        return PointSeries(self.times + offset, self.start + offset, self.end + offset)


@njit(cache=True)
def _loglik_grad(target, exciting, self_exciting, start, end, lam0, alpha, beta):
    """Log-likelihood and its gradient in (lambda0, alpha, beta)."""
    ll = 0.0
    g0 = 0.0
    ga = 0.0
    gb = 0.0
    a = 0.0  # sum of exp(-beta (t - s)) over exciting events s < t
    b = 0.0  # sum of (t - s) exp(-beta (t - s))
    t_prev = start
    n = target.shape[0]
    m = exciting.shape[0]
    i = 0
    j = 0
    while i < n or (not self_exciting and j < m):
        if self_exciting:
            is_target = True
            t = target[i]
        elif i < n and (j >= m or target[i] <= exciting[j]):
            is_target = True
            t = target[i]
        else:
            is_target = False
            t = exciting[j]
        dt = t - t_prev
        e = math.exp(-beta * dt)
        b = e * (b + dt * a)
        a = e * a
        t_prev = t
        if is_target:
            lam = lam0 + alpha * a
            ll += math.log(lam)
            g0 += 1.0 / lam
            ga += a / lam
            gb += -alpha * b / lam
            i += 1
            if self_exciting:
                a += 1.0
        else:
            a += 1.0
            j += 1
    # compensator
    src = target if self_exciting else exciting
    s1 = 0.0
    s2 = 0.0
    for k in range(src.shape[0]):
        if src[k] < end:
            r = end - src[k]
            e = math.exp(-beta * r)
            s1 += 1.0 - e
            s2 += r * e
    T = end - start
    ll -= lam0 * T + alpha / beta * s1
    g0 -= T
    ga -= s1 / beta
    gb -= -alpha / (beta * beta) * s1 + alpha / beta * s2
    return ll, g0, ga, gb


def _check_params(params: HawkesParams) -> None:
    if not params.lambda0 > 0 or not params.beta > 0 or params.alpha < 0:
        raise ValueError(f"need lambda0 > 0, beta > 0, alpha >= 0: {params}")


_EMPTY = np.zeros(0)


def log_likelihood(series: PointSeries, params: HawkesParams, exciting: PointSeries | None = None) -> float:
    _check_params(params)
    ex = exciting.times if exciting is not None else _EMPTY
    ll, *_ = _loglik_grad(series.times, ex, exciting is None, series.start, series.end,
                          params.lambda0, params.alpha, params.beta)
    return float(ll)


def log_likelihood_bruteforce(series: PointSeries, params: HawkesParams,
                              exciting: PointSeries | None = None) -> float:
    """O(n^2) evaluation straight from the intensity definition."""
    _check_params(params)
    src = series.times if exciting is None else exciting.times
    ll = 0.0
    for t in series.times:
        past = src[src < t]
        ll += math.log(params.lambda0 + params.alpha * np.exp(-params.beta * (t - past)).sum())
    inside = src[src < series.end]
    comp = params.lambda0 * series.duration + params.alpha / params.beta * np.sum(1 - np.exp(-params.beta * (series.end - inside)))
    return ll - comp


class FitError(RuntimeError):
    def __init__(self, message: str, best: "HawkesFit | None" = None):
        super().__init__(message)
        self.best = best


@dataclass
class HawkesFit:
    params: HawkesParams
    loglik: float
    converged: bool
    n_events: int
    stationary: bool
    starts: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.params.ratio


def _start_points(rate: float) -> list[tuple[float, float, float]]:
    pts = []
    for beta in np.logspace(-1, 2, 4):
        for ratio in (0.2, 0.6):
            pts.append((max(rate * (1 - ratio), 1e-6), ratio * beta, beta))
    return pts


def fit(series: PointSeries, exciting: PointSeries | None = None, min_events: int = 100,
        require_stationary: bool = True) -> HawkesFit:
    n = len(series)
    if n < min_events:
        raise ValueError(f"need at least {min_events} events, got {n}")
    T = series.duration
    if T <= 0:
        raise ValueError("empty horizon")
    self_exc = exciting is None
    ex = _EMPTY if self_exc else exciting.times
    if not self_exc and len(ex) == 0:
        # nothing excites: the model is a homogeneous Poisson process
        lam = n / T
        ll = n * math.log(lam) - lam * T
        return HawkesFit(HawkesParams(lam, 0.0, 1.0), ll, True, n, True,
                         metadata={"note": "no exciting events; Poisson baseline"})

    def neg(z):
        lam0, alpha, beta = np.exp(z)
        ll, g0, ga, gb = _loglik_grad(series.times, ex, self_exc, series.start, series.end, lam0, alpha, beta)
        if not math.isfinite(ll):
            return 1e300, np.zeros(3)
        return -ll, -np.array([g0 * lam0, ga * alpha, gb * beta])

    # a kernel whose memory exceeds the sample cannot be told apart from a trend
    bounds = [(-30.0, 12.0), (-30.0, 12.0), (-math.log(T), 12.0)]
    lo, hi = np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds])
    best = None
    starts = []
    for lam0, alpha, beta in _start_points(n / T):
        z0 = np.clip(np.log([lam0, alpha, beta]), lo, hi)
        lam0, alpha, beta = np.exp(z0)
        res = optimize.minimize(neg, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-8})
        starts.append({"start": [float(lam0), float(alpha), float(beta)], "loglik": float(-res.fun), "converged": bool(res.success)})
        if best is None or res.fun < best.fun:
            best = res
    lam0, alpha, beta = (float(v) for v in np.exp(best.x))
    params = HawkesParams(lam0, alpha, beta)
    out = HawkesFit(params, float(-best.fun), bool(best.success), n, params.ratio < 1, starts,
                    metadata={"optimizer": "L-BFGS-B on log-parameters, 8 starts",
                              "ties": f"+{TIE_EPS:g}s per tied position",
                              "beta_bounds": [math.exp(lo[2]), math.exp(hi[2])],
                              "beta_at_bound": bool(np.isclose(best.x[2], lo[2]) or np.isclose(best.x[2], hi[2]))})
    if not any(s["converged"] for s in starts):
        raise FitError("no start converged", out)
    if self_exc and require_stationary and not out.stationary:
        raise FitError(f"non-stationary fit, alpha/beta = {params.ratio:.3f}", out)
    return out


def simulate_hawkes(params: HawkesParams, horizon: float, seed: int,
                    exciting: PointSeries | None = None, start: float = 0.0) -> PointSeries:
    """Ogata thinning on [start, start + horizon]."""
    _check_params(params)
    if exciting is None and params.ratio >= 1:
        raise ValueError(f"branching ratio {params.ratio} >= 1: explosive process")
    rng = np.random.default_rng(seed)
    end = start + horizon
    if horizon <= 0:
        return PointSeries(np.zeros(0), start, end)
    ex = _EMPTY if exciting is None else exciting.times
    times = _thinning(params.lambda0, params.alpha, params.beta, start, end, ex, exciting is None, rng)
    return PointSeries(times, start, end)


def _thinning(lam0, alpha, beta, start, end, ex, self_exc, rng):
    out = []
    t = start
    a = 0.0  # excitation sum at time t
    j = 0
    m = len(ex)
    while j < m and ex[j] < start:
        j += 1
    # uniforms drawn in blocks to keep Python overhead down
    block = rng.random(4096)
    bi = 0
    while True:
        lam_bar = lam0 + alpha * a
        if bi >= len(block) - 1:
            block = rng.random(4096)
            bi = 0
        w = -math.log(1.0 - block[bi]) / lam_bar
        u = block[bi + 1]
        bi += 2
        nxt_ex = ex[j] if j < m else math.inf
        if t + w >= nxt_ex and not self_exc:
            # the bound jumps at the next exciting event; restart from there
            a = a * math.exp(-beta * (nxt_ex - t)) + 1.0
            t = nxt_ex
            j += 1
            continue
        t_new = t + w
        if t_new > end:
            break
        a = a * math.exp(-beta * w)
        t = t_new
        if u * lam_bar <= lam0 + alpha * a:
            out.append(t)
            if self_exc:
                a += 1.0
    return np.asarray(out)


@dataclass
class FlowComparison:
    model: str
    raw: HawkesFit
    matched: HawkesFit

    @property
    def difference(self) -> float:
        return self.raw.ratio - self.matched.ratio


def compare_flows(raw_trades: PointSeries, matched_flow: PointSeries, model: str = "SELF",
                  raw_cancels: PointSeries | None = None, matched_cancels: PointSeries | None = None,
                  min_events: int = 100) -> FlowComparison:
    """Fit the same model on raw and matched preparations of one instrument-day.

    SELF fits the market order series on itself. CROSS fits cancellations at the
    best quotes excited by market orders; the raw preparation keeps every
    cancellation, the matched one only those not identified as trades.
    """
    if model == "SELF":
        raw = fit(raw_trades, min_events=min_events, require_stationary=False)
        matched = fit(matched_flow, min_events=min_events, require_stationary=False)
    elif model == "CROSS":
        if raw_cancels is None or matched_cancels is None:
            raise ValueError("CROSS needs raw and matched cancellation series")
        raw = fit(raw_cancels, exciting=raw_trades, min_events=min_events)
        matched = fit(matched_cancels, exciting=matched_flow, min_events=min_events)
    else:
        raise ValueError(f"unknown model {model!r}")
    return FlowComparison(model, raw, matched)


@dataclass
class FlowSeries:
    raw_trades: PointSeries
    matched_flow: PointSeries
    raw_cancels: PointSeries
    matched_cancels: PointSeries


def flow_series(trades, raw_events, result) -> FlowSeries:
    """Point series for one instrument-day, all on a common horizon (seconds).

    Raw trades are the distinct trade timestamps. The matched flow is the
    MARKET events of the matching result. Cancellations are those at the
    best level; the matched preparation drops the ones relabelled as MARKET.
    """
    times = [tr.t for tr in trades] + [e.t for e in raw_events]
    if not times:
        raise ValueError("no data")
    lo, hi = min(times) / 1000.0, max(times) / 1000.0 + TIE_EPS * 1e3

    def series(ms) -> PointSeries:
        return PointSeries.from_timestamps(np.asarray(sorted(ms), dtype=float) / 1000.0, lo, hi)

    raw_t = sorted({tr.t for tr in trades})
    matched = [e.t for e in result.flow.events if e.kind == MARKET]
    raw_c = [e.t for e in raw_events if e.kind == CANCEL and e.level == 1]
    matched_c = [e.t for e in result.flow.events if e.kind == CANCEL and e.level == 1]
    return FlowSeries(series(raw_t), series(matched), series(raw_c), series(matched_c))


COMPARISON_HEADER = "date,flow_kind,lambda0,alpha,beta,ratio,loglik,converged"


def write_comparisons(rows: Sequence[tuple[str, FlowComparison]]) -> bytes:
    buf = io.StringIO()
    buf.write(COMPARISON_HEADER + "\n")
    for date, cmp in rows:
        for kind, f in (("raw", cmp.raw), ("matched", cmp.matched)):
            p = f.params
            buf.write(f"{date},{cmp.model.lower()}_{kind},{p.lambda0:.10g},{p.alpha:.10g},{p.beta:.10g},"
                      f"{f.ratio:.10g},{f.loglik:.10g},{int(f.converged)}\n")
    return buf.getvalue().encode("utf-8")
