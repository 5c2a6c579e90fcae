import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expi

from conftest import build, catalog, synth_caps
from pathfgp.errors import (ConfigError, InitialConditionViolated, InsufficientPreHistory, NonnegativityBreached,
                            RatioBoundBreached)
from pathfgp.funcalc import gamma_by_ito_expansion, gamma_closed_form, numeric_hessian, path_states, view_at
from pathfgp.genlib import CATALOG, LogIntegral, make_functional
from pathfgp.marketpath import CapitalizationPath, MarketWeightPath, TimeGrid, covariation, to_market_weights
from pathfgp.strategy import additive_strategy


def flat(weights, n=10, n_pre=0):
    w = np.asarray(weights, dtype=float)[:, None] * np.ones(n)
    return to_market_weights(CapitalizationPath(TimeGrid(np.arange(float(n))), w), n_pre)


def states(F, mu):
    F = F.bind(mu)
    s = path_states(F, mu)
    return F, s


# -- shifted entropy -----------------------------------------------------------

def test_entropy_of_uniform():
    F, s = states(make_functional("shifted_entropy", p=1), flat([1, 1, 1, 1]))
    np.testing.assert_allclose(F.value(s.x, s.y, s.a), math.log(4), rtol=0, atol=1e-15)


def test_entropy_balance_defect(caps5):
    mu = to_market_weights(caps5)
    F, s = states(make_functional("shifted_entropy", p=3), mu)
    lhs = np.sum(s.x * F.gradient(s.x, s.y, s.a), axis=0) - F.value(s.x, s.y, s.a)
    np.testing.assert_allclose(lhs, -1.0, atol=1e-13)
    assert additive_strategy(F, mu).defect_c0 == pytest.approx(-1.0, abs=1e-13)


def test_entropy_nonnegativity_monitor():
    mu = flat([0.97, 0.01, 0.01, 0.01])
    with pytest.raises(NonnegativityBreached):
        additive_strategy(make_functional("shifted_entropy", p=2), mu)
    with pytest.warns(RuntimeWarning):
        additive_strategy(make_functional("shifted_entropy", p=2), mu, on_violation="warn")


# -- running extrema -------------------------------------------------------------

def test_auto_p_running_min():
    w = np.array([0.065, 0.3, 0.3, 0.335])
    F = make_functional("entropy_running_min").bind(flat(w))
    assert F.p == pytest.approx(1 / 0.335)
    F = make_functional("entropy_running_min").bind(flat([0.065] * 10 + [0.35]))
    assert F.p == pytest.approx(1 / 0.35)
    w = np.full(20, 0.935 / 19)
    w[0] = 0.065
    F = make_functional("entropy_running_min").bind(flat(w))
    assert F.p == pytest.approx(15.3846, abs=1e-4)


def test_running_max_uniform_constant():
    d = 5
    mu = flat(np.ones(d))
    ser = additive_strategy(make_functional("entropy_running_max", p=1), mu)
    np.testing.assert_allclose(ser.holdings, math.log(d), atol=1e-14)
    assert np.all(ser.gamma.values == 0)


def test_running_max_single_mover():
    x = np.array([0.2, 0.25, 0.3, 0.28, 0.35])
    mu = MarketWeightPath.from_array(np.vstack([x, 1 - x]))
    F = make_functional("entropy_running_max", p=1)
    g = gamma_closed_form(F, mu).values
    # the second weight never exceeds its start, only the first moves its max
    expected = np.maximum.accumulate(x) - x[0]
    np.testing.assert_allclose(g, expected, atol=1e-15)


def test_running_min_constant_path():
    mu = flat([0.2, 0.3, 0.5])
    ser = additive_strategy(make_functional("entropy_running_min"), mu)
    assert np.all(ser.gamma.values == 0)
    np.testing.assert_allclose(ser.value, ser.G[0], rtol=0, atol=1e-15)


def test_running_min_lower_bound_chain(caps5):
    F, mu = build("entropy_running_min", {"p": "auto"}, caps5)
    s = path_states(F, mu)
    G = F.value(s.x, s.y, s.a)
    f = F.lower_bound(s.x, s.y, s.a)
    assert np.all(G >= f - 1e-14) and np.all(f >= -1e-14)
    assert np.all(np.diff(f) >= 0)
    assert F.kappa() == -1.0


@pytest.mark.parametrize("name", ["entropy_running_max", "entropy_running_min"])
def test_extremum_hessian_zero(name, caps5):
    F, mu = build(name, {"p": 1}, caps5)
    np.testing.assert_allclose(numeric_hessian(F, 50, mu), 0.0, atol=1e-6)


# -- iterated entropy ------------------------------------------------------------

def test_log_integral_against_exponential_integral():
    for r, x in ((2.0, 0.1), (5.0, 0.05), (1.0, 0.3)):
        # li_r(x) = li(r x) / r and li(y) = Ei(log y)
        assert LogIntegral(r)(x) == pytest.approx(expi(math.log(r * x)) / r, abs=1e-10)
    assert LogIntegral(2.0)(0.0) == 0.0
    xs = np.linspace(1e-4, 1 / (2 * math.e), 20)
    v = LogIntegral(2.0)(xs)
    assert np.all(np.diff(v) < 0) and np.all(v <= 0)


def test_iterated_admissibility():
    w = np.full(20, 0.935 / 19)
    w[0] = 0.065
    mu = flat(w)
    make_functional("iterated_entropy_min", r=5).bind(mu)
    with pytest.raises(InitialConditionViolated):
        make_functional("iterated_entropy_min", r=6).bind(mu)


def test_iterated_kappa_uniform():
    F = make_functional("iterated_entropy_min", r=2).bind(flat(np.ones(10)))
    expected = -1.0 - 10 * expi(math.log(0.2)) / 2
    assert F.kappa() == pytest.approx(expected, abs=1e-10)
    assert -1 < F.kappa() <= 0


def test_iterated_constant_path_long_only():
    mu = flat([0.05, 0.1, 0.15, 0.2, 0.25, 0.25])
    ser = additive_strategy(make_functional("iterated_entropy_min", r=1.0), mu)
    assert np.all(ser.gamma.values == 0)
    assert np.min(ser.holdings) >= 0
    assert np.min(ser.theta) >= 1.0


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_iterated_gamma_bounds(seed):
    caps = synth_caps(4, 300, seed=seed % 1000, spread=0.4, vol=0.4)
    mu = to_market_weights(caps)
    r = 0.9 / (math.e * float(np.max(mu.weights[:, 0])))
    ser = additive_strategy(make_functional("iterated_entropy_min", r=r), mu, gamma="closed")
    kappa = ser.functional.kappa()
    assert np.all(ser.gamma.values <= 1e-14) and np.all(ser.gamma.values >= kappa - 1e-12)
    assert np.min(ser.holdings) >= -1e-12


# -- quadratic -------------------------------------------------------------------

@pytest.mark.parametrize("d,p", [(2, 1.0), (5, 0.5), (10, 3.0)])
def test_quadratic_uniform_value(d, p):
    F, s = states(make_functional("quadratic_running_max", p=p), flat(np.ones(d)))
    np.testing.assert_allclose(F.value(s.x, s.y, s.a), (1 + p) * (1 - 1 / d), atol=1e-15)


def test_quadratic_value_range(caps5):
    F, mu = build("quadratic_running_max", {"p": 2.0}, caps5)
    s = path_states(F, mu)
    G = F.value(s.x, s.y, s.a)
    assert np.all(G >= 0) and np.all(G <= 3 - 3 / 5 + 1e-15)
    assert gamma_closed_form(F, mu).values[0] == 0.0


# -- delayed functionals ---------------------------------------------------------

def test_delayed_constant_paths():
    mu = flat([0.2, 0.3, 0.5], n=12, n_pre=3)
    ser = additive_strategy(make_functional("delayed_difference", delta=3), mu)
    np.testing.assert_allclose(ser.G, 2.0, atol=1e-15)
    np.testing.assert_allclose(ser.holdings, 2.0, atol=1e-15)
    np.testing.assert_allclose(ser.value, 2.0, atol=1e-15)
    ser = additive_strategy(make_functional("delayed_relative_entropy", delta=3, zeta=2.0), mu)
    np.testing.assert_allclose(ser.G, math.log(2.0), atol=1e-15)


def test_delayed_difference_value_formula():
    caps = synth_caps(3, 400, seed=13, spread=0.3)
    F, mu = build("delayed_difference", {"delta": 5}, caps)
    ser = additive_strategy(F, mu, gamma="closed")
    x, y = ser.states.x, ser.states.y
    dq = np.cumsum(np.sum(np.diff(x, axis=1) ** 2, axis=0))
    expected = 2 - np.sum((x - y) ** 2, axis=0) + np.concatenate([[0.0], dq])
    np.testing.assert_allclose(ser.value, expected, rtol=0, atol=1e-14)


def test_relative_entropy_holdings_spread():
    caps = synth_caps(4, 300, seed=17, spread=0.3)
    F, mu = build("delayed_relative_entropy", {"delta": 5, "zeta": 2.0}, caps)
    ser = additive_strategy(F, mu)
    lr = np.log(ser.states.x / ser.states.y)
    np.testing.assert_allclose(ser.holdings[0] - ser.holdings[1], lr[1] - lr[0], atol=1e-13)


def test_delayed_errors():
    with pytest.raises(ConfigError):
        make_functional("delayed_relative_entropy", delta=2, zeta=1.0)
    with pytest.raises(ConfigError):
        make_functional("delayed_difference", delta=1.5)
    with pytest.raises(InsufficientPreHistory):
        make_functional("delayed_difference", delta=4).bind(flat([0.5, 0.5], n=10, n_pre=2))
    x = np.array([0.1] * 4 + [0.1, 0.1, 0.35, 0.1])
    caps = CapitalizationPath(TimeGrid(np.arange(8.0)), np.vstack([x, 1 - x]))
    F = make_functional("delayed_relative_entropy", delta=2, zeta=3.0)
    with pytest.raises(RatioBoundBreached) as e:
        additive_strategy(F, to_market_weights(caps, 2))
    # raw column 6 sits at t = 4 once two columns are pre-history
    assert e.value.i == 0 and e.value.t == 4.0


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["delayed_difference", "delayed_relative_entropy"]))
@settings(max_examples=25, deadline=None)
def test_delayed_jets_read_two_samples(seed, name):
    rng = np.random.default_rng(seed)
    delta, n, t = 4, 30, 20
    caps = rng.uniform(0.8, 1.2, size=(3, n))
    other = caps.copy()
    keep = {t, t - delta}
    for j in range(n):
        if j not in keep:
            other[:, j] = rng.uniform(0.8, 1.2, size=3)
    # renormalization needs identical weights at the kept columns
    params = {"delta": delta} if name == "delayed_difference" else {"delta": delta, "zeta": 5.0}
    jets = []
    for c in (caps, other):
        F = make_functional(name, **params)
        mu = to_market_weights(CapitalizationPath(TimeGrid(np.arange(float(n))), c), delta)
        jets.append(F.bind(mu).jet(view_at(mu, F.make_aux(mu), t - delta)))
    a, b = jets
    assert a.value == b.value
    np.testing.assert_array_equal(a.grad, b.grad)
    np.testing.assert_array_equal(a.hess, b.hess)


# -- catalog-wide ----------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_closed_forms_match_expansion(seed):
    caps = synth_caps(5, 512, seed=seed, spread=0.3)
    for name, params in catalog(to_market_weights(caps)):
        F, mu = build(name, params, caps)
        if not F.has_closed_form:
            continue
        cov = covariation(mu)[-1]
        aux = F.make_aux(mu)
        gc = gamma_closed_form(F, mu, aux, cov).values
        ge = gamma_by_ito_expansion(F, mu, aux, cov).values
        assert np.all(np.abs(gc - ge) <= 1e-10 * (1 + np.abs(gc))), name


def test_make_functional_errors():
    with pytest.raises(ConfigError):
        make_functional("nope")
    # keys an entry does not take are ignored
    assert make_functional("shifted_entropy", q=1, delta=3).params() == {"p": 1.0}
    with pytest.raises(ConfigError):
        make_functional("shifted_entropy", p="abc")
    assert set(CATALOG) == {c[0] for c in catalog()}
    assert make_functional("shifted_entropy", p="9").p == 9.0


def test_descriptors():
    for name, params in catalog():
        F = make_functional(name, **params)
        d = F.descriptor
        assert d.name == name and d.requires_pre_history == F.lag
    assert make_functional("entropy_running_max", p=1).balanced_status == "balanced"
