"""Poisson toy model of Lee-Ready signing accuracy.

Mid-price moving events are Poisson; the number of up minus down moves over a
gap is Skellam distributed, and the probability that a trade is signed
correctly by a quote taken ``delta_lr`` after the trade timestamp follows from
its CDF.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import integrate, optimize, special

BUY = "BUY"
SELL = "SELL"


# -- modified Bessel functions -----------------------------------------------

def bessel_i_scaled(kmax: int, x: float) -> np.ndarray:
    """exp(-x) * I_k(x) for k = 0..kmax, by normalized downward recurrence.

    Recurrence: I_{k-1} = I_{k+1} + (2k/x) I_k, normalized with
    I_0 + 2 sum_{k>=1} I_k = exp(x).
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    out = np.zeros(kmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    if x < 1e-6:
        # a handful of series terms are exact to double precision here
        half = 0.5 * x
        for k in range(kmax + 1):
            lt = k * math.log(half) - math.lgamma(k + 1)
            if lt < -745:
                break
            term = math.exp(lt)
            out[k] = term * (1.0 + half * half / (k + 1)) * math.exp(-x)
        return out
    m = max(kmax, int(x)) + 20 + int(math.sqrt(40.0 * max(kmax, x)))
    m += m % 2
    return _downward(kmax, m, x)


@njit(cache=True)
def _downward(kmax, m, x):
    vals = np.zeros(m + 1)
    b_next = 0.0
    b = 1e-280
    vals[m] = b
    for k in range(m, 0, -1):
        b_prev = b_next + (2.0 * k / x) * b
        b_next = b
        b = b_prev
        vals[k - 1] = b
        if b > 1e200:
            for i in range(k - 1, m + 1):
                vals[i] *= 1e-200
            b *= 1e-200
            b_next *= 1e-200
    norm = vals[0] + 2.0 * vals[1:].sum()
    return vals[:kmax + 1] / norm


# -- Skellam distribution ------------------------------------------------------

def _check_mu(mu1: float, mu2: float) -> None:
    if not (mu1 >= 0 and mu2 >= 0) or math.isinf(mu1) or math.isinf(mu2):
        raise ValueError(f"Skellam means must be finite and >= 0, got {mu1}, {mu2}")


def _poisson_cdf(n: int, mu: float) -> float:
    if n < 0:
        return 0.0
    if mu == 0:
        return 1.0
    return float(special.gammaincc(n + 1, mu))


def skellam_pmf_range(mu1: float, mu2: float) -> tuple[int, np.ndarray]:
    """(k_lo, pmf) with pmf[j] = P(N1 - N2 = k_lo + j), covering all but a negligible tail."""
    _check_mu(mu1, mu2)
    mean = mu1 - mu2
    sd = math.sqrt(mu1 + mu2)
    width = int(40 + 12 * sd)
    k_lo = int(math.floor(mean)) - width
    k_hi = int(math.ceil(mean)) + width
    x = 2.0 * math.sqrt(mu1 * mu2)
    kabs = max(abs(k_lo), abs(k_hi))
    iv = bessel_i_scaled(kabs, x)
    ks = np.arange(k_lo, k_hi + 1)
    with np.errstate(divide="ignore"):
        log_iv = np.log(iv[np.abs(ks)])
    log_pmf = -(math.sqrt(mu1) - math.sqrt(mu2)) ** 2 + 0.5 * ks * (math.log(mu1) - math.log(mu2)) + log_iv
    return k_lo, np.exp(log_pmf)


def skellam_cdf(n: int, mu1: float, mu2: float) -> float:
    """P(N1 - N2 <= n) with N1 ~ Poisson(mu1), N2 ~ Poisson(mu2) independent."""
    _check_mu(mu1, mu2)
    n = int(n)
    if mu1 == 0 and mu2 == 0:
        return 1.0 if n >= 0 else 0.0
    if mu2 == 0:
        return _poisson_cdf(n, mu1)
    if mu1 == 0:
        # -N2 <= n  <=>  N2 >= -n
        return 1.0 - _poisson_cdf(-n - 1, mu2)
    k_lo, pmf = skellam_pmf_range(mu1, mu2)
    j = n - k_lo
    if j < 0:
        return 0.0
    if j >= len(pmf) - 1:
        return 1.0
    # sum the shorter tail for accuracy
    if n < mu1 - mu2:
        return float(min(1.0, math.fsum(pmf[:j + 1])))
    return float(max(0.0, 1.0 - math.fsum(pmf[j + 1:])))


# -- toy model ---------------------------------------------------------------------

@dataclass(frozen=True)
class SkellamParams:
    lambda_lc_plus: float
    lambda_lc_minus: float
    lambda_m_plus: float
    lambda_m_minus: float
    rho_agg: float

    def __post_init__(self):
        rates = (self.lambda_lc_plus, self.lambda_lc_minus, self.lambda_m_plus, self.lambda_m_minus)
        if any(not math.isfinite(r) or r < 0 for r in rates):
            raise ValueError("rates must be finite and >= 0")
        if self.lambda_m_plus + self.lambda_m_minus <= 0:
            raise ValueError("need a positive market order rate")
        if not 0 <= self.rho_agg <= 1:
            raise ValueError("rho_agg must be in [0, 1]")

    @property
    def up_rate(self) -> float:
        return self.lambda_lc_plus + self.lambda_m_plus

    @property
    def down_rate(self) -> float:
        return self.lambda_lc_minus + self.lambda_m_minus

    @property
    def rho_plus(self) -> float:
        return self.lambda_m_plus / (self.lambda_m_plus + self.lambda_m_minus)


def _check_gap(gap: float) -> None:
    if gap < 0:
        raise ValueError("gap must be >= 0")


def p_before(side: str, params: SkellamParams, gap: float) -> float:
    """Correct-sign probability with a quote taken ``gap`` seconds before the book update."""
    _check_gap(gap)
    up, down = params.up_rate * gap, params.down_rate * gap
    if side == BUY:
        return skellam_cdf(0, down, up)
    return skellam_cdf(0, up, down)


def p_after(side: str, params: SkellamParams, gap: float, aggressive: bool) -> float:
    """Correct-sign probability with a quote taken ``gap`` seconds after the book update."""
    _check_gap(gap)
    if not aggressive:
        return p_before(SELL if side == BUY else BUY, params, gap)
    up, down = params.up_rate * gap, params.down_rate * gap
    if side == BUY:
        return skellam_cdf(-1, up, down)
    return skellam_cdf(-1, down, up)


def p_deterministic(params: SkellamParams, delta: float, delta_lr: float) -> float:
    """Probability of a correct sign when the book update lags the trade by ``delta``."""
    gap = delta - delta_lr
    rp = params.rho_plus
    if gap > 0:
        return rp * p_before(BUY, params, gap) + (1 - rp) * p_before(SELL, params, gap)
    if gap < 0:
        g = -gap
        passive = rp * p_after(BUY, params, g, False) + (1 - rp) * p_after(SELL, params, g, False)
        agg = rp * p_after(BUY, params, g, True) + (1 - rp) * p_after(SELL, params, g, True)
        return (1 - params.rho_agg) * passive + params.rho_agg * agg
    return 1.0


@dataclass
class LagDensity:
    """Density of the reporting lag (seconds) of quotes updates behind trades."""

    kind: str
    value: float = 0.0
    mean: float = 0.0
    sd: float = 0.0
    edges: tuple = ()
    weights: tuple = ()

    @classmethod
    def dirac(cls, value: float) -> "LagDensity":
        return cls("DIRAC", value=value)

    @classmethod
    def gaussian(cls, mean: float, sd: float) -> "LagDensity":
        if sd <= 0:
            raise ValueError("sd must be > 0")
        return cls("GAUSSIAN", mean=mean, sd=sd)

    @classmethod
    def empirical(cls, edges: Sequence[float], counts: Sequence[float]) -> "LagDensity":
        edges = tuple(float(e) for e in edges)
        counts = np.asarray(counts, dtype=float)
        if len(edges) != len(counts) + 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be increasing with len(counts) + 1 entries")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("counts must be >= 0 with a positive total")
        return cls("EMPIRICAL", edges=edges, weights=tuple(counts / counts.sum()))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "LagDensity":
        return cls.empirical([lo, hi], [1.0])

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "DIRAC":
            return (self.value, self.value)
        if self.kind == "GAUSSIAN":
            return (self.mean - 12 * self.sd, self.mean + 12 * self.sd)
        if self.kind == "EMPIRICAL":
            return (self.edges[0], self.edges[-1])
        raise ValueError(f"unknown lag density kind {self.kind!r}")

    def pdf(self, u: float) -> float:
        if self.kind == "GAUSSIAN":
            z = (u - self.mean) / self.sd
            return math.exp(-0.5 * z * z) / (self.sd * math.sqrt(2 * math.pi))
        if self.kind == "EMPIRICAL":
            if u < self.edges[0] or u >= self.edges[-1]:
                return 0.0
            i = int(np.searchsorted(self.edges, u, side="right")) - 1
            return self.weights[i] / (self.edges[i + 1] - self.edges[i])
        raise ValueError("DIRAC has no density")

    def total_mass(self) -> float:
        if self.kind == "DIRAC":
            return 1.0
        if self.kind == "EMPIRICAL":
            return float(sum(self.weights))
        lo, hi = self.support
        return integrate.quad(self.pdf, lo, hi, epsabs=1e-12)[0]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "DIRAC":
            return np.full(size, self.value)
        if self.kind == "GAUSSIAN":
            return rng.normal(self.mean, self.sd, size)
        bins = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        lo = np.asarray(self.edges[:-1])[bins]
        hi = np.asarray(self.edges[1:])[bins]
        return lo + (hi - lo) * rng.random(size)

    def to_dict(self) -> dict:
        return asdict(self)


def p_expected(params: SkellamParams, f_delta: LagDensity, delta_lr: float, epsabs: float = 1e-8) -> float:
    """Accuracy at ``delta_lr`` averaged over the lag density."""
    if f_delta.kind == "DIRAC":
        return p_deterministic(params, f_delta.value, delta_lr)
    if f_delta.kind == "GAUSSIAN":
        lo, hi = f_delta.support
        pieces = [(lo, hi, f_delta.pdf)]
    elif f_delta.kind == "EMPIRICAL":
        e = f_delta.edges
        pieces = []
        for i, w in enumerate(f_delta.weights):
            if w > 0:
                dens = w / (e[i + 1] - e[i])
                pieces.append((e[i], e[i + 1], lambda u, dens=dens: dens))
    else:
        raise ValueError(f"unknown lag density kind {f_delta.kind!r}")
    total = 0.0
    for lo, hi, dens in pieces:
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("lag density support must be bounded")
        f = lambda u: p_deterministic(params, u, delta_lr) * dens(u)
        # the integrand jumps at u = delta_lr; slivers left by rounding of the support are dropped
        cuts = [lo, delta_lr, hi] if lo < delta_lr < hi else [lo, hi]
        for a, b in zip(cuts, cuts[1:]):
            if b - a > 1e-12:
                total += integrate.quad(f, a, b, epsabs=epsabs, limit=200)[0]
    return min(1.0, max(0.0, total))


def model_curve(params: SkellamParams, f_delta: LagDensity, lags: Sequence[float]) -> list[tuple[float, float]]:
    return [(float(x), p_expected(params, f_delta, x)) for x in lags]


def write_curve(curve: Sequence[tuple[float, float]]) -> bytes:
    buf = io.StringIO()
    buf.write("delta_lr,probability\n")
    for x, p in curve:
        buf.write(f"{x:.6f},{p:.12f}\n")
    return buf.getvalue().encode("utf-8")


# -- calibration -------------------------------------------------------------

class CalibrationError(RuntimeError):
    def __init__(self, message: str, best: "CalibrationResult | None" = None):
        super().__init__(message)
        self.best = best


@dataclass
class CalibrationResult:
    params: SkellamParams
    residual_norm: float
    residuals: list[float]
    degenerate: bool
    success: bool
    message: str = ""
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["schema_version"] = 1
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _from_identifiable(z: np.ndarray, m_total: float) -> SkellamParams:
    # z = (up rate, down rate, rho_plus, rho_agg); only these enter the model
    up, down, rho_plus, rho_agg = (float(v) for v in z)
    m_plus, m_minus = rho_plus * m_total, (1 - rho_plus) * m_total
    scale = 1.0
    if m_plus > up:
        scale = min(scale, up / m_plus)
    if m_minus > down:
        scale = min(scale, down / m_minus)
    m_plus, m_minus = m_plus * scale, m_minus * scale
    if m_plus + m_minus <= 0:
        m_plus = m_minus = 1e-12
    return SkellamParams(max(0.0, up - m_plus), max(0.0, down - m_minus), m_plus, m_minus, rho_agg)


def calibrate(curve: Sequence[tuple[float, float]], f_delta: LagDensity, init: SkellamParams,
              max_rate: float = 1e3) -> CalibrationResult:
    """Unweighted least-squares fit of the model curve to (delta_lr, accuracy) points.

    The model only depends on the up/down mid-move rates, the buy fraction and
    rho_agg. Those four are fitted; the total market order rate is kept from
    ``init`` to split the fitted rates back into limit/cancel and market parts.
    """
    pts = [(float(x), float(y)) for x, y in curve]
    if len(pts) < 4:
        raise ValueError("need at least 4 curve points for 4 free parameters")
    xs = np.array([x for x, _ in pts])
    ys = np.array([y for _, y in pts])
    m_total = init.lambda_m_plus + init.lambda_m_minus

    def resid(z):
        p = _from_identifiable(z, m_total)
        return np.array([p_expected(p, f_delta, x) for x in xs]) - ys

    z0 = np.array([max(init.up_rate, 1e-6), max(init.down_rate, 1e-6), init.rho_plus, init.rho_agg])
    lower = np.array([0.0, 0.0, 0.0, 0.0])
    upper = np.array([max_rate, max_rate, 1.0, 1.0])
    z0 = np.clip(z0, lower, upper)
    sol = optimize.least_squares(resid, z0, bounds=(lower, upper), x_scale="jac",
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    params = _from_identifiable(sol.x, m_total)
    r = resid(sol.x)
    degenerate = params.up_rate + params.down_rate < 1e-6
    result = CalibrationResult(params, float(np.linalg.norm(r)), [float(v) for v in r], degenerate,
                               bool(sol.success), str(sol.message),
                               metadata={"objective": "unweighted least squares on accuracy",
                                         "nfev": int(sol.nfev)})
    if not sol.success:
        raise CalibrationError(f"least squares did not converge: {sol.message}", result)
    return result
