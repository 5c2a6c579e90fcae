"""Daily-rebalancing backtest of generated portfolios.

Weights for day l are computed from the close of day l-1 and the
dollar wealth evolves by
W(l) = sum_i W(l-1) pi_i(l-1) S_i(l) / S_i(l-1), with W(0) = Sigma(0).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, WeightsUndefined
from .funcalc import GeneratingFunctional
from .marketpath import CapitalizationPath, to_market_weights
from .strategy import StrategySeries, additive_strategy, multiplicative_strategy
from .svg import line_chart

__all__ = ["BacktestConfig", "BacktestReport", "run_backtest", "decomposition_report", "emit_svg",
           "emit_comparison_svg"]


@dataclass(frozen=True)
class BacktestConfig:
    """Backtest options.

    Attributes
    ----------
    rebalance_every : int
        Rebalance to the target weights every k trading days; positions
        are held (and drift with prices) in between.
    on_undefined_weights : {"halt", "hold_market"}
        Policy when the strategy value is not positive.
    mode : {"additive", "multiplicative"}
    pre_history_days : int or None
        Leading days reserved as pre-history; defaults to the
        functional's lag.
    on_violation : {"raise", "warn", "ignore"}
        Domain monitor policy forwarded to the strategy builder.
    cost_fn : callable, optional
        cost_fn(wealth, old_positions, new_positions) -> dollar cost
        charged at each rebalance.  None means frictionless.
    """

    rebalance_every: int = 1
    on_undefined_weights: str = "halt"
    mode: str = "additive"
    pre_history_days: int | None = None
    on_violation: str = "raise"
    cost_fn: Callable | None = None

    def __post_init__(self):
        if int(self.rebalance_every) < 1:
            raise ConfigError("rebalance_every must be a positive integer")
        if self.on_undefined_weights not in ("halt", "hold_market"):
            raise ConfigError("on_undefined_weights must be 'halt' or 'hold_market'")
        if self.mode not in ("additive", "multiplicative"):
            raise ConfigError("mode must be 'additive' or 'multiplicative'")


@dataclass(frozen=True)
class BacktestReport:
    """Wealth paths and the engine's decomposition for one backtest."""

    times: np.ndarray
    W: np.ndarray
    Sigma: np.ndarray
    V: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Gamma: np.ndarray
    engine_value: np.ndarray
    residual: np.ndarray
    weights: np.ndarray
    held_market: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def G_norm(self) -> np.ndarray:
        return self.G / self.G[0]

    @property
    def Gamma_shifted(self) -> np.ndarray:
        return 1.0 + self.Gamma / self.G[0]

    def to_csv(self, fh) -> None:
        fh.write("t,W,Sigma,V,R,G_norm,Gamma_shifted\n")
        cols = np.column_stack([self.times, self.W, self.Sigma, self.V, self.R, self.G_norm, self.Gamma_shifted])
        np.savetxt(fh, cols, delimiter=",", fmt="%.17g")


def _ratios(S: np.ndarray) -> np.ndarray:
    """Gross price relatives S(l)/S(l-1); 1 where the previous price is zero."""
    prev, cur = S[:, :-1], S[:, 1:]
    out = np.ones_like(cur)
    np.divide(cur, prev, out=out, where=prev > 0)
    return out


def run_backtest(caps: CapitalizationPath, F: GeneratingFunctional, cfg: BacktestConfig = BacktestConfig(),
                 series: StrategySeries | None = None) -> BacktestReport:
    """Replay the generated portfolio on a capitalization panel.

    Parameters
    ----------
    caps : CapitalizationPath
    F : GeneratingFunctional
    cfg : BacktestConfig
    series : StrategySeries, optional
        Precomputed strategy on the same panel.

    Returns
    -------
    BacktestReport
        `residual` is W/Sigma minus the engine value normalized to one
        at the origin; the two are independent computations of the
        relative value.
    """
    n0 = F.lag if cfg.pre_history_days is None else int(cfg.pre_history_days)
    mu = to_market_weights(caps, n0)
    if series is None:
        build = additive_strategy if cfg.mode == "additive" else multiplicative_strategy
        series = build(F, mu, on_violation=cfg.on_violation)
    S = caps.caps[:, n0:]
    Sigma = S.sum(axis=0)
    n = S.shape[1]
    target = series.weights.copy()
    undefined = ~np.all(np.isfinite(target), axis=0)
    # weights of the final day are never traded
    undefined[-1] = False
    if undefined.any():
        if cfg.on_undefined_weights == "halt":
            k = int(np.flatnonzero(undefined)[0])
            raise WeightsUndefined(float(series.times[k]))
        target[:, undefined] = mu.weights[:, undefined]

    ratio = _ratios(S)
    W = np.empty(n)
    W[0] = Sigma[0]
    pos = W[0] * target[:, 0]
    k_reb = int(cfg.rebalance_every)
    for ell in range(1, n):
        if (ell - 1) % k_reb == 0 and ell > 1:
            new = W[ell - 1] * target[:, ell - 1]
            if cfg.cost_fn is not None:
                cost = float(cfg.cost_fn(W[ell - 1], pos, new))
                new = (W[ell - 1] - cost) * target[:, ell - 1]
            pos = new
        pos = pos * ratio[:, ell - 1]
        W[ell] = pos.sum()

    V = W / Sigma
    eng = series.value / series.value[0]
    conf = {"functional": F.name, **{k: v for k, v in F.bind(mu).params().items()},
            **{k: v for k, v in asdict(cfg).items() if k != "cost_fn"}, "pre_history_days": n0}
    return BacktestReport(series.times, W, Sigma, V, V - 1.0, series.G, series.gamma.values, eng,
                          V - eng, target, undefined, conf)


def decomposition_report(report: BacktestReport) -> dict:
    """Normalized series (t, G/G(0), 1 + Gamma/G(0), V/V(0))."""
    return {
        "t": report.times,
        "G_norm": report.G_norm,
        "Gamma_shifted": report.Gamma_shifted,
        "V_norm": report.V / report.V[0],
    }


def emit_svg(report: BacktestReport, which: str = "wealth") -> str:
    """SVG chart of the relative wealth or of the value decomposition."""
    t = report.times - report.times[0]
    if which == "wealth":
        return line_chart({"V = W / Sigma": (t, report.V), "market": (t, np.ones_like(t))},
                          title=f"Relative value: {report.config.get('functional', '')}")
    if which == "decomposition":
        dec = decomposition_report(report)
        return line_chart({"G / G(0)": (t, dec["G_norm"]), "1 + Gamma / G(0)": (t, dec["Gamma_shifted"]),
                           "V / V(0)": (t, dec["V_norm"])},
                          title=f"Decomposition: {report.config.get('functional', '')}")
    raise ValueError("which must be 'wealth' or 'decomposition'")


def emit_comparison_svg(reports: dict) -> str:
    """Overlay W / Sigma for several labelled reports."""
    return line_chart({label: (r.times - r.times[0], r.V) for label, r in reports.items()},
                      title="Relative value comparison")
