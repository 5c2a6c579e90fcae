import io
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import synth_caps
from pathfgp.backtest import (BacktestConfig, decomposition_report, emit_comparison_svg, emit_svg, run_backtest)
from pathfgp.errors import ConfigError, EmptySeries, WeightsUndefined
from pathfgp.genlib import make_functional
from pathfgp.marketpath import CapitalizationPath, TimeGrid, to_market_weights
from pathfgp.strategy import multiplicative_strategy
from pathfgp.svg import line_chart

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def caps():
    return synth_caps(6, 600, seed=41, spread=0.4, vol=0.3)


def polylines(doc):
    return ET.fromstring(doc).findall(f".//{SVG}polyline")


# -- recursion -------------------------------------------------------------------

def test_market_replicates_market(caps):
    rep = run_backtest(caps, make_functional("market"))
    np.testing.assert_allclose(rep.W, rep.Sigma, rtol=1e-12)
    np.testing.assert_allclose(rep.V, 1.0, atol=1e-12)
    np.testing.assert_allclose(rep.R, 0.0, atol=1e-12)


def test_single_asset_universe():
    S = np.exp(np.linspace(0, 0.3, 40))[None, :]
    one = CapitalizationPath(TimeGrid(np.arange(40.0)), S)
    # mu(-delta) = 1 is outside the functional's stated domain but G stays at 2
    rep = run_backtest(one, make_functional("delayed_difference", delta=3), BacktestConfig(on_violation="ignore"))
    np.testing.assert_allclose(rep.weights, 1.0, atol=1e-15)
    np.testing.assert_allclose(rep.V, 1.0, atol=1e-14)


def test_report_invariants(caps):
    rep = run_backtest(caps, make_functional("entropy_running_max", p=1))
    assert rep.W[0] == rep.Sigma[0] and rep.V[0] == 1.0
    np.testing.assert_array_equal(rep.R, rep.V - 1.0)
    assert np.max(np.abs(rep.residual)) <= 1e-10
    assert rep.config["functional"] == "entropy_running_max" and rep.config["p"] == 1.0


def test_scale_invariance(caps):
    F = make_functional("shifted_entropy", p=1)
    a = run_backtest(caps, F)
    b = run_backtest(CapitalizationPath(caps.grid, 250.0 * caps.caps), F)
    np.testing.assert_allclose(b.W, 250.0 * a.W, rtol=1e-12)
    np.testing.assert_allclose(b.V, a.V, rtol=1e-12)
    np.testing.assert_allclose(b.weights, a.weights, rtol=1e-12)


def test_multiplicative_wealth_positive(caps):
    F = make_functional("shifted_entropy", p=1)
    rep = run_backtest(caps, F, BacktestConfig(mode="multiplicative"))
    assert np.all(rep.W > 0)
    # the recursion compounds 1 + theta . dmu / G exactly
    ser = multiplicative_strategy(F, to_market_weights(caps))
    step = np.einsum("ij,ij->j", ser.theta[:, :-1], np.diff(ser.states.x, axis=1)) / ser.G[:-1]
    np.testing.assert_allclose(rep.V, np.concatenate([[1.0], np.cumprod(1.0 + step)]), rtol=1e-12)
    # and differs from the engine's exp-form value only by discretization
    assert np.max(np.abs(rep.residual)) <= 1e-4


def test_undefined_weight_policies():
    c = synth_caps(3, 300, seed=0, spread=0.2, vol=0.5)
    F = make_functional("quadratic_running_max", p=1.0, c=0.7)
    with pytest.raises(WeightsUndefined):
        run_backtest(c, F, BacktestConfig(on_violation="ignore"))
    rep = run_backtest(c, F, BacktestConfig(on_violation="ignore", on_undefined_weights="hold_market"))
    held = rep.held_market
    assert held.any()
    np.testing.assert_allclose(rep.weights[:, held], (c.caps / c.total)[:, held], rtol=1e-12)


def test_rebalance_every(caps):
    F = make_functional("shifted_entropy", p=1)
    daily = run_backtest(caps, F)
    np.testing.assert_array_equal(run_backtest(caps, F, BacktestConfig(rebalance_every=1)).W, daily.W)
    # never rebalancing is buy-and-hold of the initial target
    hold = run_backtest(caps, F, BacktestConfig(rebalance_every=10 ** 6))
    S = caps.caps
    expected = np.sum(hold.W[0] * hold.weights[:, :1] * S / S[:, :1], axis=0)
    np.testing.assert_allclose(hold.W, expected, rtol=1e-13)
    weekly = run_backtest(caps, F, BacktestConfig(rebalance_every=5))
    assert not np.array_equal(weekly.W, daily.W)
    np.testing.assert_array_equal(weekly.W[:6], hold.W[:6])


def test_cost_hook(caps):
    F = make_functional("shifted_entropy", p=1)
    free = run_backtest(caps, F)
    zero = run_backtest(caps, F, BacktestConfig(cost_fn=lambda w, old, new: 0.0))
    np.testing.assert_array_equal(free.W, zero.W)
    paid = run_backtest(caps, F, BacktestConfig(cost_fn=lambda w, old, new: 1e-4 * np.sum(np.abs(new - old))))
    assert paid.W[-1] < free.W[-1]


def test_config_validation():
    with pytest.raises(ConfigError):
        BacktestConfig(rebalance_every=0)
    with pytest.raises(ConfigError):
        BacktestConfig(on_undefined_weights="skip")
    with pytest.raises(ConfigError):
        BacktestConfig(mode="hybrid")


# -- reports ---------------------------------------------------------------------

def test_decomposition_anchor_and_identity(caps):
    rep = run_backtest(caps, make_functional("entropy_running_min"))
    dec = decomposition_report(rep)
    assert (dec["G_norm"][0], dec["Gamma_shifted"][0], dec["V_norm"][0]) == (1.0, 1.0, 1.0)
    eng = rep.engine_value
    np.testing.assert_allclose(eng, dec["G_norm"] + dec["Gamma_shifted"] - 1.0, atol=1e-13)
    # running minimum: Gamma only falls, so V beats the market only when G rises faster
    assert np.all(np.diff(dec["Gamma_shifted"]) <= 1e-15)
    up = eng > 1.0
    assert np.all(dec["G_norm"][up] > 1.0)


def test_report_csv(caps):
    rep = run_backtest(caps, make_functional("market"))
    buf = io.StringIO()
    rep.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,W,Sigma,V,R,G_norm,Gamma_shifted"
    assert len(lines) == caps.n + 1


def test_svgs_parse(caps):
    rep = run_backtest(caps, make_functional("shifted_entropy", p=1))
    assert len(polylines(emit_svg(rep, "wealth"))) == 2
    dec = emit_svg(rep, "decomposition")
    assert len(polylines(dec)) == 3
    for label in ("G / G(0)", "1 + Gamma / G(0)", "V / V(0)"):
        assert label in dec
    doc = emit_comparison_svg({"a": rep, "b": rep})
    assert len(polylines(doc)) == 2
    with pytest.raises(ValueError):
        emit_svg(rep, "nope")


def test_two_point_chart():
    doc = line_chart({"x": (np.array([0.0, 1.0]), np.array([1.0, 2.0]))})
    (pl,) = polylines(doc)
    assert len(pl.get("points").split()) == 2


def test_empty_chart():
    with pytest.raises(EmptySeries):
        line_chart({})
    with pytest.raises(EmptySeries):
        line_chart({"x": (np.array([]), np.array([]))})


def test_large_chart_budget():
    t = np.arange(4528.0)
    y = np.cumsum(np.random.default_rng(0).normal(size=t.size))
    start = time.perf_counter()
    doc = line_chart({"a": (t, y), "b": (t, -y), "c": (t, 0.5 * y)})
    assert time.perf_counter() - start < 1.0
    assert len(doc.encode()) < 2 * 2 ** 20
    ET.fromstring(doc)
