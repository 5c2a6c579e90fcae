"""Additively and multiplicatively generated strategies and arbitrage certificates.

Strategies are built from the by-definition Gamma by default.  With the
left-point integral this makes the grid-level value V = G + Gamma equal
to the cumulative gains of the holdings, so the strategy is exactly
self-financing on the data grid.  The closed-form and expansion routes
can be requested for comparison.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GNotBoundedAwayFromZero,
    MissingLowerBoundCompanion,
    NormalizationImpossible,
    PathfgpError,
)
from .funcalc import (
    AffineFunctional,
    GammaSeries,
    GeneratingFunctional,
    PathStates,
    _accumulate,
    gamma_by_ito_expansion,
    gamma_closed_form,
    path_states,
    resolve_aux,
)
from .marketpath import AuxPath, CovariationPath, MarketWeightPath, covariation

__all__ = [
    "StrategySeries",
    "ArbitrageCertificate",
    "T43Result",
    "additive_strategy",
    "multiplicative_strategy",
    "detect_arbitrage_T41",
    "detect_arbitrage_T42",
    "detect_arbitrage_T43",
    "MONOTONE_RTOL",
]

# relative rounding allowance for monotonicity and bound checks
MONOTONE_RTOL = 1e-12


@dataclass(frozen=True)
class StrategySeries:
    """Holdings, value and weights of a generated strategy on the data grid.

    Attributes
    ----------
    mode : {"additive", "multiplicative"}
    holdings : (d, N) array
        phi (additive) or psi (multiplicative), in units of the weights.
    theta : (d, N) array
        Vertical gradient of G.
    value : (N,) array
    G : (N,) array
    gamma : GammaSeries
    weights : (d, N) array
        pi or Pi; NaN columns where the value is not positive.
    defect_q : (N,) array
        Self-financing defect of theta (additive) or eta (multiplicative).
    defect_c0 : float
        Balance defect sum_i theta_i(0) mu_i(0) - G(0).
    K : (N,) array or None
        Multiplicative factor exp(int dGamma / G).
    """

    mode: str
    times: np.ndarray
    asset_ids: tuple
    holdings: np.ndarray
    theta: np.ndarray
    value: np.ndarray
    G: np.ndarray
    gamma: GammaSeries
    weights: np.ndarray
    defect_q: np.ndarray
    defect_c0: float
    functional: GeneratingFunctional
    states: PathStates
    K: np.ndarray | None = None

    @property
    def weights_defined(self) -> np.ndarray:
        return np.all(np.isfinite(self.weights), axis=0)

    def gains(self) -> np.ndarray:
        """Left-point cumulative gains sum_s holdings(s) . (mu(s') - mu(s))."""
        inc = np.einsum("ij,ij->j", self.holdings[:, :-1], np.diff(self.states.x, axis=1))
        return _accumulate(inc)

    def to_csv(self, fh) -> None:
        """Long format `t,V,G,Gamma,Q,asset_id,holding,weight`."""
        fh.write("t,V,G,Gamma,Q,asset_id,holding,weight\n")
        gam = self.gamma.values
        for k, t in enumerate(self.times):
            head = f"{t:.10g},{self.value[k]:.17g},{self.G[k]:.17g},{gam[k]:.17g},{self.defect_q[k]:.17g},"
            fh.write("".join(f"{head}{a},{h:.17g},{w:.17g}\n"
                             for a, h, w in zip(self.asset_ids, self.holdings[:, k], self.weights[:, k])))


def _domain_policy(F, st, policy: str) -> None:
    if policy == "ignore":
        return
    try:
        F.check_domain(st)
    except PathfgpError as exc:
        if policy == "raise":
            raise
        warnings.warn(str(exc), RuntimeWarning, stacklevel=3)


def _gamma(F, mu, aux, cov, st, G, theta, method: str) -> GammaSeries:
    if method == "definition":
        ito = _accumulate(np.einsum("ij,ij->j", theta[:, :-1], np.diff(st.x, axis=1)))
        return GammaSeries(st.times, G[0] - G + ito, "by_definition")
    if cov is None:
        cov = covariation(mu)[-1]
    if method == "expansion":
        return gamma_by_ito_expansion(F, mu, aux, cov)
    if method == "closed":
        g = gamma_closed_form(F, mu, aux, cov)
        return g if g is not None else gamma_by_ito_expansion(F, mu, aux, cov)
    raise ValueError(f"unknown gamma method {method!r}")


def _prepare(F, mu, aux, on_violation):
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    st = path_states(F, mu, aux)
    _domain_policy(F, st, on_violation)
    G = F.value(st.x, st.y, st.a, st.times)
    theta = F.gradient(st.x, st.y, st.a, st.times)
    return F, aux, st, G, theta


def additive_strategy(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                      cov: CovariationPath | None = None, gamma: str = "definition",
                      on_violation: str = "raise") -> StrategySeries:
    """Strategy additively generated by F.

    Parameters
    ----------
    F : GeneratingFunctional
    mu : MarketWeightPath
    aux : AuxPath, optional
        Built from `mu` when omitted.
    cov : CovariationPath, optional
        Only needed for the ``closed`` and ``expansion`` Gamma routes.
    gamma : {"definition", "closed", "expansion"}
    on_violation : {"raise", "warn", "ignore"}
        What to do when the path leaves the functional's domain.

    Returns
    -------
    StrategySeries
        phi_i = theta_i + Gamma + G - mu . theta, V = G + Gamma and
        pi_i = mu_i (1 + (theta_i - mu . theta) / V) where V > 0.
    """
    F, aux, st, G, theta = _prepare(F, mu, aux, on_violation)
    gam = _gamma(F, mu, aux, cov, st, G, theta, gamma)
    V = G + gam.values
    mt = np.einsum("ij,ij->j", st.x, theta)
    phi = theta + (gam.values + G - mt)[None, :]
    ito = _accumulate(np.einsum("ij,ij->j", theta[:, :-1], np.diff(st.x, axis=1)))
    q = mt - mt[0] - ito
    with np.errstate(divide="ignore", invalid="ignore"):
        pi = st.x * (1.0 + (theta - mt[None, :]) / V[None, :])
    pi[:, ~(V > 0)] = np.nan
    return StrategySeries("additive", st.times, mu.asset_ids, phi, theta, V, G, gam, pi, q,
                          float(mt[0] - G[0]), F, st)


def multiplicative_strategy(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                            cov: CovariationPath | None = None, gamma: str = "definition",
                            g_floor: float = 1e-8, on_violation: str = "raise") -> StrategySeries:
    """Strategy multiplicatively generated by F.

    K(t) = exp(sum of dGamma / G(previous)), V = G K,
    psi_i = V (1 + (theta_i - mu . theta) / G) and
    Pi_i = mu_i (1 + (theta_i - mu . theta) / G).

    Raises
    ------
    GNotBoundedAwayFromZero
        If G drops below `g_floor` anywhere on the path.
    """
    F, aux, st, G, theta = _prepare(F, mu, aux, on_violation)
    low = np.flatnonzero(G < g_floor)
    if low.size:
        k = int(low[0])
        raise GNotBoundedAwayFromZero(float(st.times[k]), float(G[k]), g_floor)
    gam = _gamma(F, mu, aux, cov, st, G, theta, gamma)
    K = np.exp(_accumulate(np.diff(gam.values) / G[:-1]))
    V = G * K
    mt = np.einsum("ij,ij->j", st.x, theta)
    rel = (theta - mt[None, :]) / G[None, :]
    psi = V[None, :] * (1.0 + rel)
    Pi = st.x * (1.0 + rel)
    eta = theta * K[None, :]
    me = np.einsum("ij,ij->j", st.x, eta)
    q = me - me[0] - _accumulate(np.einsum("ij,ij->j", eta[:, :-1], np.diff(st.x, axis=1)))
    return StrategySeries("multiplicative", st.times, mu.asset_ids, psi, theta, V, G, gam, Pi, q,
                          float(mt[0] - G[0]), F, st, K)


# -- certificates ------------------------------------------------------------

@dataclass(frozen=True)
class ArbitrageCertificate:
    """Outcome of a strong-relative-arbitrage check.

    `t_star` is set only when every prerequisite holds and the theorem's
    inequality holds at some grid time.
    """

    theorem: str
    t_star: float | None
    t_star_index: int | None
    threshold: float
    witness: dict = field(default_factory=dict)
    monotonicity_check: str = "n/a"
    max_violation: float = 0.0
    prerequisites: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "t_star": self.t_star,
            "t_star_index": self.t_star_index,
            "threshold": self.threshold,
            "witness": self.witness,
            "monotonicity_check": self.monotonicity_check,
            "max_violation": self.max_violation,
            "prerequisites": self.prerequisites,
        }

    def write(self, fh) -> None:
        json.dump(self.to_dict(), fh, indent=2, sort_keys=False, default=float)
        fh.write("\n")


def _first_crossing(values: np.ndarray, threshold: float) -> int | None:
    hit = np.flatnonzero(values > threshold)
    return int(hit[0]) if hit.size else None


def _max_drop(v: np.ndarray) -> float:
    return float(max(0.0, -np.min(np.diff(v)))) if v.size > 1 else 0.0


def detect_arbitrage_T41(series: StrategySeries) -> ArbitrageCertificate:
    """Check the nondecreasing-Gamma sufficient condition.

    Prerequisites: Gamma nondecreasing (downward steps within
    MONOTONE_RTOL * (1 + max|Gamma|)) and G >= 0 on the path.
    T* is the first grid time with Gamma(t) > G(0).
    """
    if series.mode != "additive":
        raise ValueError("T41 applies to additive strategies")
    gam, G = series.gamma.values, series.G
    scale = 1.0 + float(np.max(np.abs(gam)))
    drop = _max_drop(gam)
    mono = drop <= MONOTONE_RTOL * scale
    prereq = {"gamma_nondecreasing": mono, "G_nonnegative": bool(np.min(G) >= 0)}
    threshold = float(G[0])
    k = _first_crossing(gam, threshold) if all(prereq.values()) else None
    witness = {"G0": threshold, "gamma_T": float(gam[-1]), "V_min": float(np.min(series.value))}
    if k is not None:
        witness.update(gamma_at_t_star=float(gam[k]), V_at_t_star=float(series.value[k]))
    return ArbitrageCertificate("T41_GammaNondecreasing", None if k is None else float(series.times[k]), k,
                                threshold, witness, "pass" if mono else "fail", drop, prereq)


def detect_arbitrage_T42(series: StrategySeries, F_lower=None, kappa: float | None = None) -> ArbitrageCertificate:
    """Check the lower-bound sufficient condition.

    Parameters
    ----------
    series : StrategySeries
        Additive strategy.
    F_lower : callable (x, y, a, t) -> (N,), optional
        Lower-bound companion; defaults to the functional's own.
    kappa : float, optional
        Lower bound of Gamma; defaults to the functional's own.

    Notes
    -----
    Prerequisites are V >= 0, G >= F_lower, F_lower nondecreasing and
    Gamma >= kappa, each within MONOTONE_RTOL of the path scale.  T* is
    the first grid time with F_lower(t) > G(0) - kappa.
    """
    if series.mode != "additive":
        raise ValueError("T42 applies to additive strategies")
    F, st = series.functional, series.states
    f = F_lower(st.x, st.y, st.a, st.times) if F_lower is not None else F.lower_bound(st.x, st.y, st.a, st.times)
    kappa = F.kappa() if kappa is None else float(kappa)
    if f is None or kappa is None:
        raise MissingLowerBoundCompanion(f"{F.name} provides no lower-bound companion")
    gam, G, V = series.gamma.values, series.G, series.value
    scale = 1.0 + max(float(np.max(np.abs(G))), float(np.max(np.abs(gam))), abs(kappa))
    tol = MONOTONE_RTOL * scale
    drop = _max_drop(f)
    prereq = {
        "V_nonnegative": bool(np.min(V) >= -tol),
        "G_above_lower_bound": bool(np.min(G - f) >= -tol),
        "lower_bound_nondecreasing": drop <= tol,
        "gamma_above_kappa": bool(np.min(gam) >= kappa - tol),
    }
    threshold = float(G[0] - kappa)
    k = _first_crossing(f, threshold) if all(prereq.values()) else None
    witness = {"G0": float(G[0]), "kappa": kappa, "V_min": float(np.min(V)),
               "gamma_min": float(np.min(gam)), "F_T": float(f[-1])}
    if k is not None:
        witness.update(F_at_t_star=float(f[k]), V_at_t_star=float(V[k]))
    return ArbitrageCertificate("T42_LowerBound", None if k is None else float(series.times[k]), k,
                                threshold, witness, "pass" if drop <= tol else "fail", drop, prereq)


@dataclass(frozen=True)
class T43Result:
    certificate: ArbitrageCertificate
    functional: GeneratingFunctional
    series: StrategySeries
    normalized_gamma: GammaSeries


def detect_arbitrage_T43(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                         cov: CovariationPath | None = None, epsilon: float = 0.01, c: float = 1.0,
                         gamma: str = "definition") -> T43Result:
    """Check the multiplicative sufficient condition and build G^(c).

    G is first normalized so that G(0) = 1 (divided by G(0) when
    positive, shifted by one when zero).  T* is the first grid time with
    Gamma(t) > 1 + epsilon for the normalized functional.  The shifted
    functional G^(c) = (G + c) / (1 + c) and its multiplicative strategy
    are returned along with the certificate.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not c > 0:
        raise ValueError("c must be positive")
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    st = path_states(F, mu, aux)
    g0 = float(F.value(st.x[:, :1], None if st.y is None else st.y[:, :1], st.a[:, :1], st.times[:1])[0])
    if g0 > 0:
        Fn = AffineFunctional(F, 1.0 / g0, 0.0)
    elif g0 == 0:
        Fn = AffineFunctional(F, 1.0, 1.0)
    else:
        raise NormalizationImpossible(f"G(0) = {g0:.6g} is negative")
    add = additive_strategy(Fn, mu, aux, cov, gamma=gamma, on_violation="ignore")
    gam, G = add.gamma.values, add.G
    Fc = AffineFunctional(Fn, 1.0 / (1.0 + c), c)
    ser = multiplicative_strategy(Fc, mu, aux, cov, gamma=gamma, on_violation="ignore")
    identity = float(np.max(np.abs(ser.gamma.values * (1.0 + c) - gam)))
    prereq = {"G_nonnegative": bool(np.min(G) >= 0), "normalized": True}
    threshold = 1.0 + epsilon
    k = _first_crossing(gam, threshold) if all(prereq.values()) else None
    witness = {"G0_raw": g0, "epsilon": float(epsilon), "c": float(c), "gamma_T": float(gam[-1]),
               "identity_residual": identity, "V_c_min": float(np.min(ser.value))}
    if k is not None:
        witness.update(gamma_at_t_star=float(gam[k]), V_c_at_t_star=float(ser.value[k]),
                       V_c_outperforms=bool(ser.value[k] > 1.0))
    cert = ArbitrageCertificate("T43_Multiplicative", None if k is None else float(st.times[k]), k,
                                threshold, witness, "n/a", 0.0, prereq)
    return T43Result(cert, Fc, ser, add.gamma)
