from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobflow.hawkes import (
    COMPARISON_HEADER, TIE_EPS, FitError, FlowComparison, HawkesParams, PointSeries, _loglik_grad,
    compare_flows, fit, flow_series, log_likelihood, log_likelihood_bruteforce, simulate_hawkes,
    write_comparisons,
)
from lobflow.lob import quotes_to_eventflow
from lobflow.matcher import match3
from lobflow.synthgen import ArtifactConfig, FlowParams, render, simulate


def test_zero_alpha_is_poisson():
    rng = np.random.default_rng(0)
    s = PointSeries(np.sort(rng.uniform(0, 50, 80)), 0.0, 50.0)
    ll = log_likelihood(s, HawkesParams(1.3, 0.0, 2.0))
    assert ll == pytest.approx(80 * math.log(1.3) - 1.3 * 50, abs=1e-10)


@pytest.mark.parametrize("seed", [0, 1])
def test_recursive_matches_bruteforce_self(seed):
    p = HawkesParams(1.0, 0.5, 1.0)
    s = simulate_hawkes(p, 500.0, seed)
    assert len(s) >= 1000
    for q in (p, HawkesParams(0.3, 2.0, 5.0), HawkesParams(2.0, 0.01, 0.1)):
        assert log_likelihood(s, q) == pytest.approx(log_likelihood_bruteforce(s, q), abs=1e-9)


def test_recursive_matches_bruteforce_cross():
    src = simulate_hawkes(HawkesParams(2.0, 0.0, 1.0), 800.0, 3)
    tgt = simulate_hawkes(HawkesParams(0.5, 1.0, 2.0), 800.0, 4, exciting=src)
    assert len(tgt) >= 1000
    for q in (HawkesParams(0.5, 1.0, 2.0), HawkesParams(1.0, 0.1, 0.3)):
        assert log_likelihood(tgt, q, src) == pytest.approx(log_likelihood_bruteforce(tgt, q, src), abs=1e-9)


def test_cross_excitation_uses_strictly_earlier_events():
    src = PointSeries([1.0, 2.0], 0.0, 3.0)
    tgt = PointSeries([2.0], 0.0, 3.0)
    q = HawkesParams(0.5, 1.0, 2.0)
    assert log_likelihood(tgt, q, src) == pytest.approx(log_likelihood_bruteforce(tgt, q, src), abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 3), st.floats(0, 3), st.floats(0.2, 10), st.booleans())
def test_gradient_matches_finite_differences(lam0, alpha, beta, cross):
    s = simulate_hawkes(HawkesParams(1.0, 0.5, 1.0), 60.0, 11)
    ex = simulate_hawkes(HawkesParams(1.5, 0.0, 1.0), 60.0, 12).times if cross else np.zeros(0)
    _, *grad = _loglik_grad(s.times, ex, not cross, s.start, s.end, lam0, alpha, beta)
    x = np.array([lam0, alpha, beta])
    for k in range(3):
        h = 1e-6 * max(1.0, x[k])
        up, dn = x.copy(), x.copy()
        up[k] += h
        dn[k] -= h
        num = (_loglik_grad(s.times, ex, not cross, s.start, s.end, *up)[0]
               - _loglik_grad(s.times, ex, not cross, s.start, s.end, *dn)[0]) / (2 * h)
        assert grad[k] == pytest.approx(num, rel=1e-4, abs=1e-5)


def test_fit_recovers_self_params():
    true = HawkesParams(1.0, 0.5, 1.0)
    res = fit(simulate_hawkes(true, 10000.0, 5))
    assert res.converged and res.stationary
    assert res.ratio == pytest.approx(0.5, abs=0.06)
    assert res.params.lambda0 == pytest.approx(1.0, rel=0.15)
    assert len(res.starts) == 8


def test_fit_recovers_cross_params():
    src = simulate_hawkes(HawkesParams(2.0, 0.0, 1.0), 5000.0, 6)
    tgt = simulate_hawkes(HawkesParams(0.5, 1.0, 2.0), 5000.0, 7, exciting=src)
    res = fit(tgt, exciting=src)
    assert res.ratio == pytest.approx(0.5, abs=0.06)
    assert res.params.beta == pytest.approx(2.0, rel=0.25)


def test_cross_without_exciting_events_is_poisson():
    tgt = simulate_hawkes(HawkesParams(1.0, 0.0, 1.0), 300.0, 1)
    res = fit(tgt, exciting=PointSeries([], 0.0, 300.0))
    assert res.params.alpha == 0.0
    assert res.params.lambda0 == pytest.approx(len(tgt) / 300.0)


def test_too_few_events():
    with pytest.raises(ValueError):
        fit(PointSeries(np.arange(1.0, 50.0), 0.0, 50.0))


def test_accelerating_series_is_not_stationary():
    # an intensity that keeps growing is best explained by a branching ratio above one
    t = 100.0 * (np.arange(1, 401) / 400) ** (1 / 3)
    s = PointSeries(t, 0.0, 100.0)
    with pytest.raises(FitError) as exc:
        fit(s)
    assert exc.value.best is not None
    assert exc.value.best.ratio >= 1
    assert not fit(s, require_stationary=False).stationary


def test_explosive_simulation_rejected():
    with pytest.raises(ValueError):
        simulate_hawkes(HawkesParams(1.0, 2.0, 1.0), 10.0, 0)


def test_invalid_params_rejected():
    s = PointSeries([1.0], 0.0, 2.0)
    with pytest.raises(ValueError):
        log_likelihood(s, HawkesParams(0.0, 1.0, 1.0))


def test_ties_are_spread_in_order():
    s = PointSeries.from_timestamps([3.0, 1.0, 1.0, 1.0, 2.0])
    assert np.allclose(s.times, [1.0, 1.0 + TIE_EPS, 1.0 + 2 * TIE_EPS, 2.0, 3.0], atol=0, rtol=0)
    assert (s.start, s.end) == (1.0, 3.0)
    with pytest.raises(ValueError):
        PointSeries([1.0, 1.0], 0.0, 2.0)
    with pytest.raises(ValueError):
        PointSeries([3.0], 0.0, 2.0)


def test_simulation_is_reproducible_and_in_horizon():
    p = HawkesParams(1.0, 0.5, 1.0)
    a, b = simulate_hawkes(p, 100.0, 9, start=50.0), simulate_hawkes(p, 100.0, 9, start=50.0)
    assert np.array_equal(a.times, b.times)
    assert a.times.min() >= 50.0 and a.times.max() <= 150.0


def _day(seed):
    p = FlowParams(horizon=600, depth=5, lambda_lc_plus=1, lambda_lc_minus=1, lambda_m_plus=1.5,
                   lambda_m_minus=1.5, noise_rate=1, seed=seed)
    feed = render(simulate(p), ArtifactConfig(split_max=3, split_jitter=0.002), seed=seed)
    flow = quotes_to_eventflow(feed.quotes, 5)
    return feed, flow, match3(feed.trades, flow)


def test_flow_series_on_common_horizon():
    feed, flow, res = _day(2)
    fs = flow_series(feed.trades, flow.events, res)
    parts = (fs.raw_trades, fs.matched_flow, fs.raw_cancels, fs.matched_cancels)
    assert len({(s.start, s.end) for s in parts}) == 1
    assert len(fs.raw_trades) == len({tr.t for tr in feed.trades})
    assert len(fs.matched_flow) == len(feed.truth.market_orders)
    assert len(fs.raw_cancels) - len(fs.matched_cancels) == len(fs.matched_flow)


def test_compare_flows_and_csv():
    feed, flow, res = _day(3)
    fs = flow_series(feed.trades, flow.events, res)
    self_cmp = compare_flows(fs.raw_trades, fs.matched_flow, "SELF")
    cross_cmp = compare_flows(fs.raw_trades, fs.matched_flow, "CROSS", fs.raw_cancels, fs.matched_cancels)
    assert isinstance(cross_cmp, FlowComparison)
    assert self_cmp.difference == self_cmp.raw.ratio - self_cmp.matched.ratio
    rows = write_comparisons([("d1", self_cmp), ("d1", cross_cmp)]).decode().splitlines()
    assert rows[0] == COMPARISON_HEADER
    assert [r.split(",")[1] for r in rows[1:]] == ["self_raw", "self_matched", "cross_raw", "cross_matched"]
    with pytest.raises(ValueError):
        compare_flows(fs.raw_trades, fs.matched_flow, "CROSS")
    with pytest.raises(ValueError):
        compare_flows(fs.raw_trades, fs.matched_flow, "BOTH")


def test_poisson_input_fits_near_zero_ratio():
    s = simulate_hawkes(HawkesParams(1.0, 0.0, 1.0), 10000.0, 21)
    res = fit(s)
    assert res.ratio < 0.05
    assert res.params.lambda0 == pytest.approx(len(s) / 10000.0, rel=0.05)


def test_fit_beats_poisson_and_respects_kernel_bound():
    s = simulate_hawkes(HawkesParams(1.0, 0.5, 1.0), 2000.0, 22)
    res = fit(s)
    n, T = len(s), s.duration
    assert res.loglik >= n * math.log(n / T) - n
    assert res.params.beta >= 1 / T * (1 - 1e-9)
    assert not res.metadata["beta_at_bound"]


def test_ratio_invariant_under_translation():
    s = simulate_hawkes(HawkesParams(1.0, 0.5, 1.0), 1000.0, 23)
    assert fit(s.shifted(36000.0)).ratio == pytest.approx(fit(s).ratio, abs=1e-6)


def test_true_params_beat_perturbed_on_average():
    true = HawkesParams(1.0, 0.5, 1.0)
    gaps = []
    for seed in range(10):
        s = simulate_hawkes(true, 500.0, 100 + seed)
        for q in (HawkesParams(1.3, 0.5, 1.0), HawkesParams(1.0, 0.8, 1.0), HawkesParams(1.0, 0.5, 0.5)):
            gaps.append(log_likelihood(s, true) - log_likelihood(s, q))
    assert np.mean(gaps) > 0


def test_poisson_counts_pass_chi_square():
    import scipy.stats

    lam, T = 2.0, 10.0
    counts = np.array([len(simulate_hawkes(HawkesParams(lam, 0.0, 1.0), T, seed)) for seed in range(400)])
    # bins with expected mass well above 5 samples
    edges = [0, 14, 17, 19, 21, 23, 26, 1000]
    obs = np.histogram(counts, bins=edges)[0]
    probs = np.diff(scipy.stats.poisson.cdf(np.array(edges) - 1, lam * T))
    probs[-1] += 1 - probs.sum()
    stat = np.sum((obs - 400 * probs) ** 2 / (400 * probs))
    assert stat < scipy.stats.chi2.ppf(0.999, len(obs) - 1)


def test_mean_count_matches_branching_formula():
    p = HawkesParams(1.0, 0.5, 1.0)
    T = 200.0
    counts = np.array([len(simulate_hawkes(p, T, seed)) for seed in range(60)])
    # the stationary mean ignores the warm-up from an empty history, a shortfall of about 1 event
    expect = p.lambda0 * T / (1 - p.ratio)
    assert abs(counts.mean() - expect) <= 3 * counts.std(ddof=1) / np.sqrt(len(counts)) + 1.0


def test_zero_horizon_is_empty():
    s = simulate_hawkes(HawkesParams(1.0, 0.5, 1.0), 0.0, 1)
    assert len(s) == 0


def test_identical_series_compare_equal():
    s = simulate_hawkes(HawkesParams(1.0, 0.5, 1.0), 500.0, 2)
    assert compare_flows(s, s, "SELF").difference == 0.0
