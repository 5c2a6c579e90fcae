import sys

import numpy as np
import pytest

from pathfgp import generate, make_functional, to_market_weights
from pathfgp.synth import MeanRevertingWeights, MultiplicativeWalk, SynthSpec


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.split("(")[0]), k)):
        terminalreporter.write_line(results[key])


def catalog(mu=None):
    """One admissible parameterization of every catalog entry for the given weights."""
    r = 1.0
    if mu is not None:
        r = min(1.0, 0.9 / (np.e * float(np.max(mu.weights[:, 0]))))
    return [
        ("market", {}),
        ("shifted_entropy", {"p": 1}),
        ("entropy_running_max", {"p": 1}),
        ("entropy_running_min", {"p": "auto"}),
        ("iterated_entropy_min", {"r": r, "p": "auto"}),
        ("quadratic_running_max", {"p": 1}),
        ("delayed_difference", {"delta": 5}),
        ("delayed_relative_entropy", {"delta": 5, "zeta": 2.0}),
    ]


def synth_caps(d=5, N=512, seed=0, spread=0.3, vol=0.2, model="walk", **kw):
    m = MultiplicativeWalk(vol=vol) if model == "walk" else MeanRevertingWeights(vol=vol, **kw)
    return generate(SynthSpec(d, N, seed=seed, model=m, init_spread=spread))


def build(name, params, caps):
    """Functional bound to the weight path derived from caps."""
    F = make_functional(name, **params)
    mu = to_market_weights(caps, F.lag)
    return F.bind(mu), mu


@pytest.fixture
def caps5():
    return synth_caps(5, 512, seed=11)
