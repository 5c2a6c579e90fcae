"""Catalog of generating functionals with analytic jets.

Every entry is an immutable value object.  Entries with data-dependent
parameters (``p="auto"``) resolve them in `bind`, from the initial
market weights only.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .errors import (
    ConfigError,
    InitialConditionViolated,
    InsufficientPreHistory,
    NonnegativityBreached,
    RatioBoundBreached,
)
from .funcalc import WEIGHT_FLOOR, FunctionalDescriptor, GeneratingFunctional, PathStates
from .marketpath import MarketWeightPath

__all__ = [
    "FunctionalDescriptor",
    "LogIntegral",
    "MarketFunctional",
    "ShiftedEntropy",
    "EntropyRunningMax",
    "EntropyRunningMin",
    "IteratedEntropyMin",
    "QuadraticRunningMax",
    "DelayedDifference",
    "DelayedRelativeEntropy",
    "market",
    "shifted_entropy",
    "entropy_running_max",
    "entropy_running_min",
    "iterated_entropy_min",
    "quadratic_running_max",
    "delayed_difference",
    "delayed_relative_entropy",
    "CATALOG",
    "make_functional",
]


def _log(x):
    return np.log(np.maximum(x, WEIGHT_FLOOR))


def _qv_since_origin(cov) -> np.ndarray:
    """sum_i (<mu_i>(t) - <mu_i>(0)) on the covariation's partition."""
    return np.cumsum(np.sum(cov.dx * cov.dx, axis=0))


def _nonnegative(F, states: PathStates) -> None:
    g = F.value(states.x, states.y, states.a, states.times)
    bad = np.flatnonzero(g < 0)
    if bad.size:
        k = int(bad[0])
        raise NonnegativityBreached(float(states.times[k]), float(g[k]))


class LogIntegral:
    """li_r(x) = integral_0^x du / log(r u) for 0 <= x < 1/r.

    Evaluated by adaptive quadrature after substituting r u = exp(-v),
    which maps the integral to -(1/r) * integral_{-log(r x)}^inf e^{-v}/v dv
    and removes the slowly decaying behavior near u = 0.
    """

    def __init__(self, r: float, tol: float = 1e-12):
        if not r > 0:
            raise ConfigError("r must be positive")
        self.r = float(r)
        self.tol = tol

    def _scalar(self, x: float) -> float:
        if x == 0:
            return 0.0
        if not 0 < x < 1 / self.r:
            raise ValueError(f"li_r is defined on [0, 1/r); got x={x}")
        lo = -math.log(self.r * x)
        val, _ = integrate.quad(lambda v: math.exp(-v) / v, lo, np.inf,
                                epsabs=self.tol, epsrel=self.tol, limit=200)
        return -val / self.r

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array([self._scalar(float(v)) for v in x.ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])


# -- catalog entries ---------------------------------------------------------

class MarketFunctional(GeneratingFunctional):
    """G = sum_i mu_i; generates the market portfolio."""

    name = "market"
    balanced_status = "balanced"
    has_closed_form = True

    def value(self, x, y, a, t=None):
        return np.sum(x, axis=0)

    def gradient(self, x, y, a, t=None):
        return np.ones_like(x)

    def closed_form_gamma(self, states, cov):
        return np.zeros(states.x.shape[1])


class ShiftedEntropy(GeneratingFunctional):
    """G = -sum_i mu_i log(p mu_i), requiring entropy > log p."""

    name = "shifted_entropy"
    balanced_status = "almost_balanced"
    has_closed_form = True

    def __init__(self, p: float = 1.0):
        if not p >= 1:
            raise ConfigError("p must be at least 1")
        self.p = float(p)

    def params(self):
        return {"p": self.p}

    def value(self, x, y, a, t=None):
        return -np.sum(x * _log(self.p * x), axis=0)

    def gradient(self, x, y, a, t=None):
        return -_log(self.p * x) - 1.0

    def hessian_diagonal(self, x, y, a, t=None):
        return -1.0 / np.maximum(x, WEIGHT_FLOOR)

    def closed_form_gamma(self, states, cov):
        x = states.x[:, cov.indices]
        inc = np.sum(cov.dx[:, 1:] ** 2 / (2 * x[:, :-1]), axis=0)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def check_domain(self, states):
        _nonnegative(self, states)


class _EntropyWithExtremum(GeneratingFunctional):
    has_closed_form = True

    def __init__(self, p=1.0):
        if p != "auto" and not float(p) >= 1:
            raise ConfigError("p must be at least 1 or 'auto'")
        self.p_mode = p if p == "auto" else float(p)
        self.p = None if p == "auto" else float(p)

    def params(self):
        return {"p": self.p_mode if self.p is None else self.p}

    @property
    def balanced_status(self):
        return "balanced" if self.p == 1.0 else "unbalanced"

    def _p(self) -> float:
        if self.p is None:
            raise ConfigError(f"{self.name}: p='auto' must be resolved with bind() first")
        return self.p

    def value(self, x, y, a, t=None):
        return -math.log(self._p()) - np.sum(x * _log(a), axis=0)

    def gradient(self, x, y, a, t=None):
        return -_log(a) + np.zeros_like(x)

    def hessian_diagonal(self, x, y, a, t=None):
        return np.zeros_like(x)

    def horizontal(self, x, y, a, t=None):
        return -x / np.maximum(a, WEIGHT_FLOOR)

    def closed_form_gamma(self, states, cov):
        s = np.sum(states.a, axis=0)
        return s - s[0]

    def check_domain(self, states):
        _nonnegative(self, states)


class EntropyRunningMax(_EntropyWithExtremum):
    """G = -log p - sum_i mu_i log mu*_i with the running maximum mu*."""

    name = "entropy_running_max"
    aux_kind = "running_max"


class EntropyRunningMin(_EntropyWithExtremum):
    """G = -log p - sum_i mu_i log mu_{*i} with the running minimum.

    Lower-bound companion F = -log p - max_i log mu_{*i}, kappa = -1.
    With p='auto', p = 1 / max_i mu_i(0).
    """

    name = "entropy_running_min"
    aux_kind = "running_min"

    def bind(self, mu: MarketWeightPath):
        if self.p_mode != "auto":
            return self
        out = EntropyRunningMin("auto")
        out.p = 1.0 / float(np.max(mu.weights[:, 0]))
        return out

    def lower_bound(self, x, y, a, t=None):
        return -math.log(self._p()) - np.max(_log(a), axis=0)

    def kappa(self):
        return -1.0


class IteratedEntropyMin(GeneratingFunctional):
    """G = -p - sum_i mu_i log(-r m_i log(r m_i)), m the running minimum.

    Requires mu_i(0) <= 1/(r e).  With p='auto', p is the smallest value
    that keeps every holding nonnegative.
    """

    name = "iterated_entropy_min"
    aux_kind = "running_min"
    has_closed_form = True

    def __init__(self, r: float, p="auto"):
        if not r > 0:
            raise ConfigError("r must be positive")
        self.r = float(r)
        self.p_mode = p if p == "auto" else float(p)
        self.p = None if p == "auto" else float(p)
        self._kappa = None

    def params(self):
        return {"r": self.r, "p": self.p_mode if self.p is None else self.p}

    def _f(self, m):
        rm = self.r * np.maximum(m, WEIGHT_FLOOR)
        return np.log(-rm * np.log(rm))

    def _p(self) -> float:
        if self.p is None:
            raise ConfigError(f"{self.name}: p='auto' must be resolved with bind() first")
        return self.p

    def bind(self, mu: MarketWeightPath):
        mu0 = mu.weights[:, 0]
        bound = 1.0 / (self.r * math.e)
        bad = np.flatnonzero(mu0 > bound)
        if bad.size:
            i = int(bad[0])
            raise InitialConditionViolated(i, float(mu0[i]), bound)
        out = IteratedEntropyMin(self.r, self.p_mode)
        out._kappa = -1.0 - float(np.sum(LogIntegral(self.r)(mu0)))
        if self.p_mode == "auto":
            rm = self.r * mu0
            out.p = -math.log(float(np.max(-rm * np.log(rm)))) + out._kappa
        return out

    def value(self, x, y, a, t=None):
        return -self._p() - np.sum(x * self._f(a), axis=0)

    def gradient(self, x, y, a, t=None):
        return -self._f(a) + np.zeros_like(x)

    def hessian_diagonal(self, x, y, a, t=None):
        return np.zeros_like(x)

    def horizontal(self, x, y, a, t=None):
        m = np.maximum(a, WEIGHT_FLOOR)
        lr = np.log(self.r * m)
        return -x * (lr + 1.0) / (m * lr)

    def closed_form_gamma(self, states, cov):
        a = states.a
        da = np.diff(a, axis=1)
        inc = np.sum((1.0 + 1.0 / np.log(self.r * a[:, 1:])) * da, axis=0)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def lower_bound(self, x, y, a, t=None):
        rm = self.r * np.maximum(a, WEIGHT_FLOOR)
        return -self._p() - np.log(np.max(-rm * np.log(rm), axis=0))

    def kappa(self):
        if self._kappa is None:
            raise ConfigError(f"{self.name}: kappa depends on mu(0); call bind() first")
        return self._kappa

    def check_domain(self, states):
        _nonnegative(self, states)


class QuadraticRunningMax(GeneratingFunctional):
    """G = c - sum_i mu_i^2 - p sum_i mu_i mu*_i; default c = 1 + p."""

    name = "quadratic_running_max"
    aux_kind = "running_max"
    has_closed_form = True

    def __init__(self, p: float = 1.0, c: float | None = None):
        if not p > 0:
            raise ConfigError("p must be positive")
        self.p = float(p)
        self.c = 1.0 + self.p if c is None else float(c)

    def params(self):
        return {"c": self.c, "p": self.p}

    def value(self, x, y, a, t=None):
        return self.c - np.sum(x * x, axis=0) - self.p * np.sum(x * a, axis=0)

    def gradient(self, x, y, a, t=None):
        return -2.0 * x - self.p * a

    def hessian_diagonal(self, x, y, a, t=None):
        return np.full_like(x, -2.0)

    def horizontal(self, x, y, a, t=None):
        return -self.p * x

    def closed_form_gamma(self, states, cov):
        # p * int mu* dmu* as a right-point Stieltjes sum, plus the QV term
        a = states.a
        inc = self.p * np.sum(a[:, 1:] * np.diff(a, axis=1), axis=0)
        return np.concatenate([[0.0], np.cumsum(inc)]) + _qv_since_origin(cov)

    def check_domain(self, states):
        _nonnegative(self, states)


class _Delayed(GeneratingFunctional):
    has_closed_form = True

    def __init__(self, delta: int):
        if float(delta) != int(delta) or int(delta) < 1:
            raise ConfigError("delta must be a positive whole number of grid steps")
        self.lag = int(delta)

    def bind(self, mu: MarketWeightPath):
        if mu.n_pre < self.lag:
            raise InsufficientPreHistory(f"{self.name} needs {self.lag} pre-history columns, found {mu.n_pre}")
        return self


class DelayedDifference(_Delayed):
    """G = 2 + beta - sum_i (mu_i(t) - mu_i(t - delta))^2."""

    name = "delayed_difference"

    def __init__(self, delta: int, beta: float = 0.0):
        super().__init__(delta)
        if beta < 0:
            raise ConfigError("beta must be nonnegative")
        self.beta = float(beta)

    def params(self):
        return {"delta": self.lag, "beta": self.beta}

    def value(self, x, y, a, t=None):
        return 2.0 + self.beta - np.sum((x - y) ** 2, axis=0)

    def gradient(self, x, y, a, t=None):
        return -2.0 * (x - y)

    def hessian_diagonal(self, x, y, a, t=None):
        return np.full_like(x, -2.0)

    def closed_form_gamma(self, states, cov):
        return _qv_since_origin(cov)

    def check_domain(self, states):
        if np.any(states.y[:, 0] >= 1):
            raise NonnegativityBreached(float(states.times[0]), 0.0)


class DelayedRelativeEntropy(_Delayed):
    """G = log zeta - sum_i mu_i(t) log(mu_i(t) / mu_i(t - delta)), zeta > 1."""

    name = "delayed_relative_entropy"

    def __init__(self, delta: int, zeta: float):
        super().__init__(delta)
        if not zeta > 1:
            raise ConfigError("zeta must exceed 1")
        self.zeta = float(zeta)

    def params(self):
        return {"delta": self.lag, "zeta": self.zeta}

    def value(self, x, y, a, t=None):
        return math.log(self.zeta) - np.sum(x * (_log(x) - _log(y)), axis=0)

    def gradient(self, x, y, a, t=None):
        return -(_log(x) - _log(y)) - 1.0

    def hessian_diagonal(self, x, y, a, t=None):
        return -1.0 / np.maximum(x, WEIGHT_FLOOR)

    def closed_form_gamma(self, states, cov):
        x = states.x[:, cov.indices]
        inc = np.sum(cov.dx[:, 1:] ** 2 / (2 * x[:, :-1]), axis=0)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def check_domain(self, states):
        ratio = states.x / np.maximum(states.y, WEIGHT_FLOOR)
        hit = np.argwhere(ratio >= self.zeta)
        if hit.size:
            k = np.argmin(hit[:, 1])
            i, j = int(hit[k, 0]), int(hit[k, 1])
            raise RatioBoundBreached(float(states.times[j]), i, float(ratio[i, j]), self.zeta)


# -- constructors ------------------------------------------------------------

def market() -> MarketFunctional:
    return MarketFunctional()


def shifted_entropy(p: float = 1.0) -> ShiftedEntropy:
    return ShiftedEntropy(p)


def entropy_running_max(p: float = 1.0) -> EntropyRunningMax:
    return EntropyRunningMax(p)


def entropy_running_min(p="auto") -> EntropyRunningMin:
    return EntropyRunningMin(p)


def iterated_entropy_min(r: float, p="auto") -> IteratedEntropyMin:
    return IteratedEntropyMin(r, p)


def quadratic_running_max(c: float | None = None, p: float = 1.0) -> QuadraticRunningMax:
    return QuadraticRunningMax(p=p, c=c)


def delayed_difference(delta: int, beta: float = 0.0) -> DelayedDifference:
    return DelayedDifference(delta, beta)


def delayed_relative_entropy(delta: int, zeta: float) -> DelayedRelativeEntropy:
    return DelayedRelativeEntropy(delta, zeta)


CATALOG = {
    "market": (market, ()),
    "shifted_entropy": (shifted_entropy, ("p",)),
    "entropy_running_max": (entropy_running_max, ("p",)),
    "entropy_running_min": (entropy_running_min, ("p",)),
    "iterated_entropy_min": (iterated_entropy_min, ("r", "p")),
    "quadratic_running_max": (quadratic_running_max, ("c", "p")),
    "delayed_difference": (delayed_difference, ("delta", "beta")),
    "delayed_relative_entropy": (delayed_relative_entropy, ("delta", "zeta")),
}


def _coerce(key: str, v):
    if v is None:
        return None
    if isinstance(v, str):
        v = v.strip().strip('"').strip("'")
        if v == "auto":
            return v
        try:
            return int(v) if key == "delta" else float(v)
        except ValueError:
            raise ConfigError(f"parameter {key}={v!r} is not numeric") from None
    return v


def make_functional(name: str, **params) -> GeneratingFunctional:
    """Build a catalog entry from a name and a (possibly string-valued) parameter map.

    Parameters that the entry does not take are ignored, so a single
    configuration block can drive several functionals.
    """
    try:
        ctor, keys = CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown functional {name!r}; choose from {', '.join(CATALOG)}") from None
    kw = {k: _coerce(k, params[k]) for k in keys if params.get(k) is not None}
    try:
        return ctor(**kw)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None
