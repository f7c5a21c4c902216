from __future__ import annotations

from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobflow.lob import CANCEL, MARKET, quotes_to_eventflow
from lobflow.matcher import match1, match2, match3
from lobflow.skellam import LagDensity, SkellamParams
from lobflow.synthgen import (
    EVENT_LABEL, ICEBERG_RESIDUAL, OFF_BOOK, ArtifactConfig, FlowParams, dump_scenario, format_lag_density,
    load_scenario, parse_lag_density, render, simulate,
)


def params(**kw) -> FlowParams:
    base = dict(horizon=300, depth=5, lambda_lc_plus=1, lambda_lc_minus=1, lambda_m_plus=1.5,
                lambda_m_minus=1.5, noise_rate=1, seed=1)
    base.update(kw)
    return FlowParams(**base)


def test_no_market_rates_no_market_events():
    truth = simulate(params(lambda_m_plus=0, lambda_m_minus=0))
    assert truth.market_orders == []
    assert all(e.kind != MARKET for e in truth.events)


def test_buy_fraction_is_balanced():
    truth = simulate(params(horizon=4000, lambda_lc_plus=0.2, lambda_lc_minus=0.2, noise_rate=0.1))
    n = len(truth.market_orders)
    buys = sum(mo.side == "A" for mo in truth.market_orders)
    assert abs(buys - n / 2) <= 3 * np.sqrt(n / 4)


def test_one_tick_regime_moves_by_one_tick():
    truth = simulate(params())
    tick = truth.params.tick
    assert np.all(truth.mid_ask - truth.mid_bid == tick)
    assert set(np.abs(np.diff(truth.mid2))) == {2 * tick}


def test_simulation_is_deterministic():
    a, b = simulate(params(seed=5)), simulate(params(seed=5))
    assert a.events == b.events and a.quotes == b.quotes
    art = ArtifactConfig(split_max=3, split_jitter=0.002, iceberg_fraction=0.1, offbook_fraction=0.05)
    fa, fb = render(a, art, seed=2), render(b, art, seed=2)
    assert fa.trades_bytes() == fb.trades_bytes()
    assert fa.quotes_bytes() == fb.quotes_bytes()
    assert fa.labels_bytes() == fb.labels_bytes()
    assert render(a, art, seed=3).trades_bytes() != fa.trades_bytes()


def test_perfect_render_matches_line_for_line():
    truth = simulate(params())
    feed = render(truth, ArtifactConfig.perfect())
    assert len(feed.trades) == len(truth.market_orders)
    res = match1(feed.trades, quotes_to_eventflow(feed.quotes, 5), delta=0.0)
    assert res.matched_trades == len(feed.trades)


def test_two_way_splits_need_aggregation():
    truth = simulate(params(queue_min=10))
    feed = render(truth, ArtifactConfig(lag_density=LagDensity.dirac(0.007), split_min=2, split_max=2))
    flow = quotes_to_eventflow(feed.quotes, 5)
    assert len(feed.trades) == sum(min(2, mo.qty) for mo in truth.market_orders)
    assert match1(feed.trades, flow).matched_trades / len(feed.trades) < 0.02
    assert match2(feed.trades, flow).matched_trades == len(feed.trades)


def test_split_lines_conserve_quantity():
    truth = simulate(params())
    feed = render(truth, ArtifactConfig(split_max=5, split_jitter=0.003), seed=4)
    total = defaultdict(int)
    times = defaultdict(list)
    for tr, ln in zip(feed.trades, feed.lines):
        assert ln.label == EVENT_LABEL
        total[ln.event] += tr.qty
        times[ln.event].append(tr.t)
    for j, mo in enumerate(truth.market_orders):
        assert total[mo.event] == mo.qty
        ts = times[mo.event]
        assert max(ts) - min(ts) <= 3
        assert mo.t - min(ts) == feed.lags_ms[j]
        assert 50 <= feed.lags_ms[j] <= 150


def test_labels_cover_every_line():
    truth = simulate(params())
    feed = render(truth, ArtifactConfig(iceberg_fraction=0.2, offbook_fraction=0.1), seed=8)
    assert len(feed.lines) == len(feed.trades)
    rows = feed.labels_bytes().decode().splitlines()
    assert rows[0] == "trade_line,label,event_id"
    assert len(rows) == len(feed.trades) + 1
    assert {ln.label for ln in feed.lines} == {EVENT_LABEL, ICEBERG_RESIDUAL, OFF_BOOK}
    assert all(r.endswith(",") for r, ln in zip(rows[1:], feed.lines) if ln.label == OFF_BOOK)


def test_iceberg_prints_exceed_visible_decrease():
    truth = simulate(params())
    feed = render(truth, ArtifactConfig(iceberg_fraction=1.0, split_max=3), seed=1)
    by_order = defaultdict(list)
    for tr, ln in zip(feed.trades, feed.lines):
        by_order[ln.order].append(tr.qty)
    for j, mo in enumerate(truth.market_orders):
        parts = by_order[j]
        hidden = sum(parts) - mo.qty
        assert hidden >= 1
        assert all(q > hidden for q in parts)


def test_icebergs_and_offbook_stay_unmatched():
    truth = simulate(params())
    feed = render(truth, ArtifactConfig(split_max=4, split_jitter=0.003, iceberg_fraction=0.1,
                                        offbook_fraction=0.05), seed=3)
    res = match3(feed.trades, quotes_to_eventflow(feed.quotes, 5))
    assert set(res.unmatched) == feed.lines_with(ICEBERG_RESIDUAL, OFF_BOOK)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6))
def test_relaxed_regime_is_reconstructed(seed):
    truth = simulate(params(regime="relaxed", horizon=120, seed=seed))
    flow = quotes_to_eventflow(truth.quotes, 5)
    expect = sorted((e.t, CANCEL if e.kind == MARKET else e.kind, e.side, e.price, e.qty) for e in truth.events)
    assert sorted((e.t, e.kind, e.side, e.price, e.qty) for e in flow.events) == expect


def test_relaxed_regime_widens_spread():
    truth = simulate(params(regime="relaxed", horizon=600))
    assert np.max(truth.mid_ask - truth.mid_bid) > truth.params.tick


def test_from_skellam_matches_mid_move_rates():
    sp = SkellamParams(2, 3, 1, 0.5, 0.4)
    fp = FlowParams.from_skellam(sp, horizon=10)
    assert fp.lambda_lc_plus + fp.rho_agg * fp.lambda_m_plus == pytest.approx(sp.up_rate)
    assert fp.lambda_lc_minus + fp.rho_agg * fp.lambda_m_minus == pytest.approx(sp.down_rate)


@pytest.mark.parametrize("kw", [
    dict(rho_agg=1.5), dict(lambda_m_plus=-1), dict(regime="nope"), dict(queue_min=1), dict(initial_bid=10),
])
def test_flow_params_validation(kw):
    with pytest.raises(ValueError):
        FlowParams(**kw)


@pytest.mark.parametrize("kw", [dict(split_min=0), dict(split_min=3, split_max=2), dict(split_jitter=-1),
                                dict(iceberg_fraction=2), dict(offbook_fraction=1.0)])
def test_artifact_validation(kw):
    with pytest.raises(ValueError):
        ArtifactConfig(**kw)


@pytest.mark.parametrize("text", ["dirac:0.1", "gaussian:1.0,0.1", "empirical:0.0,0.1,0.2;0.25,0.75"])
def test_lag_density_text_round_trip(text):
    d = parse_lag_density(text)
    assert parse_lag_density(format_lag_density(d)) == d


def test_uniform_lag_text():
    assert parse_lag_density("uniform:0.05,0.15") == LagDensity.uniform(0.05, 0.15)
    with pytest.raises(ValueError):
        parse_lag_density("triangle:1")


def test_scenario_round_trip():
    text = "horizon = 120\nsplit_max = 4  # lines per order\nlag_density = dirac:0.02\nregime = relaxed\n"
    flow, art = load_scenario(text)
    assert (flow.horizon, flow.regime, art.split_max, art.lag_density.value) == (120.0, "relaxed", 4, 0.02)
    assert load_scenario(dump_scenario(flow, art)) == (flow, art)
    with pytest.raises(KeyError):
        load_scenario("bogus = 1\n")
