"""Synthetic capitalization paths and an independent Gamma oracle.

Randomness comes from a counter-based generator (Philox keyed by the
seed, one counter block per stream), converted to normals through the
inverse normal CDF.  A given (seed, stream, length) always produces the
same numbers, whatever order streams are drawn in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .funcalc import GammaSeries, GeneratingFunctional
from .marketpath import AuxPath, CapitalizationPath, MarketWeightPath, TimeGrid

__all__ = ["MultiplicativeWalk", "MeanRevertingWeights", "SynthSpec", "normals", "generate", "oracle_gamma"]


@dataclass(frozen=True)
class MultiplicativeWalk:
    """S_i <- S_i exp((nu_i - sigma_i^2 / 2) dt + sigma_i sqrt(dt) z)."""

    vol: float | tuple = 0.2
    drift: float | tuple = 0.0


@dataclass(frozen=True)
class MeanRevertingWeights:
    """Log-capitalizations pulled towards target weights.

    log S_i <- log S_i + rate (log level_i - log mu_i) dt + vol sqrt(dt) z.
    `level=None` targets equal weights.
    """

    rate: float = 5.0
    level: tuple | None = None
    vol: float | tuple = 0.2


@dataclass(frozen=True)
class SynthSpec:
    """Specification of a synthetic panel.

    Attributes
    ----------
    d : int
        Number of assets.
    N : int
        Number of steps; the panel has N + 1 daily observations.
    seed : int
        64-bit key of the counter-based generator.
    model : MultiplicativeWalk or MeanRevertingWeights
    dt : float
        Step size in model time units (years by default convention).
    init_spread : float
        Log-dispersion of initial capitalizations; 0 gives equal weights.
    s0 : float
        Scale of initial capitalizations.
    """

    d: int
    N: int
    seed: int = 0
    model: MultiplicativeWalk | MeanRevertingWeights = field(default_factory=MultiplicativeWalk)
    dt: float = 1.0 / 252
    init_spread: float = 0.0
    s0: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.N < 2:
            raise ValueError("need d >= 1 and N >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if np.any(np.asarray(self.model.vol, dtype=float) < 0):
            raise ValueError("volatilities must be nonnegative")


def normals(seed: int, stream: int, n: int) -> np.ndarray:
    """n standard normals from block `stream` of the generator keyed by `seed`."""
    bg = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)])
    raw = bg.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def _per_asset(v, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.full(d, float(v)) if v.ndim == 0 else v.reshape(d)


def generate(spec: SynthSpec) -> CapitalizationPath:
    """Draw a capitalization panel; a pure function of `spec`."""
    d, n = spec.d, spec.N
    # stream i drives asset i; stream d seeds the initial dispersion
    z = np.vstack([normals(spec.seed, i, n) for i in range(d)])
    log0 = spec.init_spread * normals(spec.seed, d, d) if spec.init_spread else np.zeros(d)
    log0 = log0 + math.log(spec.s0)
    m = spec.model
    sig = _per_asset(m.vol, d)
    sq = math.sqrt(spec.dt)
    if isinstance(m, MultiplicativeWalk):
        nu = _per_asset(m.drift, d)
        steps = ((nu - 0.5 * sig ** 2) * spec.dt)[:, None] + (sig * sq)[:, None] * z
        logs = np.concatenate([log0[:, None], log0[:, None] + np.cumsum(steps, axis=1)], axis=1)
    elif isinstance(m, MeanRevertingWeights):
        target = np.full(d, 1.0 / d) if m.level is None else _per_asset(m.level, d)
        target = np.log(target / target.sum())
        logs = np.empty((d, n + 1))
        logs[:, 0] = log0
        for k in range(n):
            cur = logs[:, k]
            lw = cur - (np.max(cur) + np.log(np.sum(np.exp(cur - np.max(cur)))))
            logs[:, k + 1] = cur + m.rate * (target - lw) * spec.dt + sig * sq * z[:, k]
    else:
        raise TypeError(f"unknown model {type(m).__name__}")
    caps = np.exp(logs)
    return CapitalizationPath(TimeGrid(np.arange(n + 1, dtype=float)), caps)


def oracle_gamma(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                 cov=None) -> GammaSeries:
    """By-definition Gamma computed step by step in extended precision.

    Each step's gains are summed exactly with math.fsum and accumulated
    in long double; states are assembled here column by column rather
    than through the engine's vectorized path helpers.
    """
    F = F.bind(mu)
    if aux is None:
        aux = F.make_aux(mu)
    full = mu.full
    n_pre, lag = mu.n_pre, F.lag
    vals = np.empty(mu.n)
    total = np.longdouble(0)
    g0 = None
    prev_theta = prev_x = None
    for k in range(mu.n):
        x = full[:, n_pre + k: n_pre + k + 1]
        y = full[:, n_pre + k - lag: n_pre + k - lag + 1] if lag else None
        a = aux.values[:, k: k + 1]
        t = mu.grid.times[k: k + 1]
        g = float(F.value(x, y, a, t)[0])
        if k == 0:
            g0 = g
        else:
            dx = x[:, 0] - prev_x
            total += np.longdouble(math.fsum((prev_theta * dx).tolist()))
        vals[k] = float(np.longdouble(g0) - np.longdouble(g) + total)
        prev_theta = F.gradient(x, y, a, t)[:, 0]
        prev_x = x[:, 0]
    return GammaSeries(mu.grid.times, vals, "oracle_by_definition")
