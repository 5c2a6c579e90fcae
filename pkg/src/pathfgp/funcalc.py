"""Non-anticipative functionals, their derivatives, and the Gamma functional.

A generating functional is evaluated on a state (x, y, a) at each grid
time: x = mu(t), y = mu(t - lag) for delayed functionals, a = A(t).  The
state-level methods are vectorized over a trailing time axis so whole
paths can be processed at once.  `PathView` is a truncated copy of the
path up to one grid time; the numeric derivative routines perturb views,
never the underlying path, which makes non-anticipativity structural.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AtOrigin,
    DomainViolation,
    InsufficientPreHistory,
    LengthMismatch,
    MissingAux,
    MissingCovariation,
)
from .marketpath import (
    AuxPath,
    CovariationPath,
    MarketWeightPath,
    RefiningPartitionFamily,
    aux_path,
    covariation,
)

__all__ = [
    "FunctionalJet",
    "FunctionalDescriptor",
    "GeneratingFunctional",
    "AffineFunctional",
    "PathView",
    "PathStates",
    "GammaSeries",
    "ItoIntegralSeries",
    "ItoResidual",
    "path_states",
    "view_at",
    "resolve_aux",
    "numeric_vertical_gradient",
    "numeric_hessian",
    "numeric_horizontal_derivatives",
    "pathwise_ito_integral",
    "gamma_by_definition",
    "gamma_by_ito_expansion",
    "gamma_closed_form",
    "verify_ito",
]

# weights are floored here before any logarithm
WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class FunctionalJet:
    """Value and derivatives of a functional at one grid time.

    `hderiv[0]` is the time derivative D_0; `hderiv[k]` pairs with the
    k-th auxiliary coordinate.
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray
    hderiv: np.ndarray


@dataclass(frozen=True)
class FunctionalDescriptor:
    name: str
    params: dict
    requires_aux: str = "none"
    requires_pre_history: int = 0
    closed_form_gamma: bool = False
    balanced_status: str = "unbalanced"
    domain: str = ""


@dataclass(frozen=True)
class PathView:
    """Path information available at one grid time.

    Attributes
    ----------
    times : (k+1,) array
        Grid times up to and including the current one.
    mu : (d, n_pre+k+1) array
        Weights including pre-history; the last column is mu(t).
    aux : (m, k+1) array
    n_pre : int
    """

    times: np.ndarray
    mu: np.ndarray
    aux: np.ndarray
    n_pre: int = 0

    @property
    def t(self) -> float:
        return float(self.times[-1])

    def with_current(self, x: np.ndarray) -> "PathView":
        """Vertical perturbation: replace only the current value of mu."""
        mu = self.mu.copy()
        mu[:, -1] = x
        return PathView(self.times, mu, self.aux, self.n_pre)


@dataclass(frozen=True)
class PathStates:
    """States (x, y, a) at a set of grid indices, columns in time order."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    a: np.ndarray

    def take(self, idx) -> "PathStates":
        return PathStates(self.times[idx], self.x[:, idx],
                          None if self.y is None else self.y[:, idx], self.a[:, idx])


class GeneratingFunctional:
    """Base class for functionals G(t, mu, A) of the weight path.

    Subclasses implement `value` and `gradient` on states, and override
    `hessian_diagonal`, `horizontal`, `time_derivative` and
    `closed_form_gamma` where they have analytic forms.  All state
    methods take x (d, K), y (d, K) or None, a (m, K) and t (K,) and
    return arrays with a trailing axis of length K.
    """

    name = "functional"
    aux_kind = "none"
    balanced_status = "unbalanced"
    has_closed_form = False
    lag = 0

    # -- description -------------------------------------------------------
    def params(self) -> dict:
        return {}

    @property
    def aux_params(self) -> dict:
        return {}

    @property
    def descriptor(self) -> FunctionalDescriptor:
        return FunctionalDescriptor(self.name, self.params(), self.aux_kind, self.lag,
                                    self.has_closed_form, self.balanced_status, self.__doc__ or "")

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def bind(self, mu: MarketWeightPath) -> "GeneratingFunctional":
        """Resolve data-dependent parameters and check initial conditions."""
        return self

    def make_aux(self, mu: MarketWeightPath) -> AuxPath:
        return aux_path(mu, self.aux_kind, **self.aux_params)

    # -- state methods -----------------------------------------------------
    def value(self, x, y, a, t=None) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x, y, a, t=None) -> np.ndarray:
        raise NotImplementedError

    def hessian_diagonal(self, x, y, a, t=None) -> np.ndarray | None:
        """Diagonal of the vertical Hessian when it is diagonal, else None."""
        return np.zeros_like(x)

    def hessian(self, x, y, a, t=None) -> np.ndarray:
        """Full vertical Hessian, (d, d, K)."""
        hd = self.hessian_diagonal(x, y, a, t)
        d, k = x.shape
        out = np.zeros((d, d, k))
        out[np.arange(d), np.arange(d), :] = hd
        return out

    def horizontal(self, x, y, a, t=None) -> np.ndarray:
        """D_k for the auxiliary coordinates, (m, K)."""
        return np.zeros((a.shape[0], x.shape[1]))

    def time_derivative(self, x, y, a, t=None) -> np.ndarray:
        """D_0, the explicit time derivative; zero for time-homogeneous functionals."""
        return np.zeros(x.shape[1])

    def closed_form_gamma(self, states: PathStates, cov: CovariationPath | None) -> np.ndarray | None:
        return None

    def lower_bound(self, x, y, a, t=None) -> np.ndarray | None:
        """Companion functional F with G >= F, if the functional provides one."""
        return None

    def kappa(self) -> float | None:
        """Lower bound of Gamma paired with `lower_bound`."""
        return None

    def check_domain(self, states: PathStates) -> None:
        """Raise a typed violation when the path leaves the functional's domain."""

    # -- path-level helpers ------------------------------------------------
    def state_of(self, view: PathView):
        if self.lag and view.mu.shape[1] - 1 - self.lag < 0:
            raise InsufficientPreHistory(f"lag {self.lag} exceeds the available history")
        x = view.mu[:, -1:]
        y = view.mu[:, -1 - self.lag: view.mu.shape[1] - self.lag] if self.lag else None
        a = view.aux[:, -1:]
        return x, y, a, np.array([view.t])

    def evaluate(self, view: PathView) -> float:
        x, y, a, t = self.state_of(view)
        return float(self.value(x, y, a, t)[0])

    def jet(self, view: PathView) -> FunctionalJet:
        x, y, a, t = self.state_of(view)
        h = np.concatenate([self.time_derivative(x, y, a, t), self.horizontal(x, y, a, t)[:, 0]])
        return FunctionalJet(float(self.value(x, y, a, t)[0]), self.gradient(x, y, a, t)[:, 0],
                             self.hessian(x, y, a, t)[:, :, 0], h)


class AffineFunctional(GeneratingFunctional):
    """alpha * (G + beta) for a base functional G.

    Used to normalize G(0) to one and to build the shifted family
    G^(c) = (G + c) / (1 + c).
    """

    def __init__(self, base: GeneratingFunctional, alpha: float = 1.0, beta: float = 0.0):
        self.base = base
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.name = f"affine({base.name})"
        self.aux_kind = base.aux_kind
        self.lag = base.lag
        self.has_closed_form = base.has_closed_form

    def params(self):
        return {"base": self.base.name, **self.base.params(), "alpha": self.alpha, "beta": self.beta}

    @property
    def aux_params(self):
        return self.base.aux_params

    def bind(self, mu):
        b = self.base.bind(mu)
        return self if b is self.base else AffineFunctional(b, self.alpha, self.beta)

    def make_aux(self, mu):
        return self.base.make_aux(mu)

    def value(self, x, y, a, t=None):
        return self.alpha * (self.base.value(x, y, a, t) + self.beta)

    def gradient(self, x, y, a, t=None):
        return self.alpha * self.base.gradient(x, y, a, t)

    def hessian_diagonal(self, x, y, a, t=None):
        h = self.base.hessian_diagonal(x, y, a, t)
        return None if h is None else self.alpha * h

    def hessian(self, x, y, a, t=None):
        return self.alpha * self.base.hessian(x, y, a, t)

    def horizontal(self, x, y, a, t=None):
        return self.alpha * self.base.horizontal(x, y, a, t)

    def time_derivative(self, x, y, a, t=None):
        return self.alpha * self.base.time_derivative(x, y, a, t)

    def closed_form_gamma(self, states, cov):
        g = self.base.closed_form_gamma(states, cov)
        return None if g is None else self.alpha * g

    def lower_bound(self, x, y, a, t=None):
        f = self.base.lower_bound(x, y, a, t)
        return None if f is None else self.alpha * (f + self.beta)

    def kappa(self):
        k = self.base.kappa()
        return None if k is None else self.alpha * k

    def check_domain(self, states):
        self.base.check_domain(states)


# -- series containers -------------------------------------------------------

@dataclass(frozen=True)
class GammaSeries:
    times: np.ndarray
    values: np.ndarray
    method: str

    def to_csv(self, fh) -> None:
        fh.write("t,value\n")
        fh.write("".join(f"{t:.10g},{v:.17g}\n" for t, v in zip(self.times, self.values)))


@dataclass(frozen=True)
class ItoIntegralSeries:
    times: np.ndarray
    values: np.ndarray

    def to_csv(self, fh) -> None:
        fh.write("t,value\n")
        fh.write("".join(f"{t:.10g},{v:.17g}\n" for t, v in zip(self.times, self.values)))


@dataclass(frozen=True)
class ItoResidual:
    """Itô-formula residual along one partition level."""

    level: int
    mesh: float
    residual: float
    relative: float
    terms: dict = field(default_factory=dict)


# -- plumbing ----------------------------------------------------------------

def resolve_aux(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None) -> AuxPath:
    """Return the auxiliary path F needs, building it when not supplied."""
    if F.aux_kind == "none":
        return aux if aux is not None and aux.kind == "none" else aux_path(mu, "none")
    if aux is None:
        return F.make_aux(mu)
    if aux.kind != F.aux_kind:
        raise MissingAux(f"{F.name} needs a {F.aux_kind} path, got {aux.kind}")
    if aux.values.shape[1] != mu.n:
        raise LengthMismatch("aux path length differs from the weight path")
    return aux


def path_states(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None) -> PathStates:
    """States of F at every grid time."""
    aux = resolve_aux(F, mu, aux)
    y = None
    if F.lag:
        if mu.n_pre < F.lag:
            raise InsufficientPreHistory(f"{F.name} needs {F.lag} pre-history columns, found {mu.n_pre}")
        full = mu.full
        y = full[:, mu.n_pre - F.lag: mu.n_pre - F.lag + mu.n]
    return PathStates(mu.grid.times, mu.weights, y, aux.values)


def view_at(mu: MarketWeightPath, aux: AuxPath | None, k: int) -> PathView:
    """Copy of the path information up to grid index k."""
    if not 0 <= k < mu.n:
        raise IndexError(k)
    full = mu.full
    av = np.zeros((0, k + 1)) if aux is None else aux.values[:, : k + 1].copy()
    return PathView(mu.grid.times[: k + 1].copy(), full[:, : mu.n_pre + k + 1].copy(), av, mu.n_pre)


def _level_indices(mu: MarketWeightPath, partition) -> np.ndarray:
    if partition is None:
        return np.arange(mu.n)
    if isinstance(partition, RefiningPartitionFamily):
        return partition.finest
    idx = np.asarray(partition, dtype=np.int64)
    if idx[0] != 0 or idx[-1] != mu.n - 1 or np.any(np.diff(idx) <= 0):
        raise ValueError("partition indices must increase from 0 to N-1")
    return idx


def _accumulate(increments: np.ndarray) -> np.ndarray:
    """Cumulative sum with a leading zero; increments[k] covers (k-1, k]."""
    out = np.zeros(increments.size + 1)
    np.cumsum(increments, out=out[1:])
    return out


# -- numeric derivatives -----------------------------------------------------

def _bump_sizes(x: np.ndarray, bump: float) -> np.ndarray:
    """Per-coordinate bump, shrunk near the simplex boundary.

    The bump never exceeds 0.2% of the distance to 0 or 1, which keeps
    the truncation error of the difference quotients proportional to the
    local curvature scale of logarithmic functionals.
    """
    if bump <= 0:
        raise ValueError("bump must be positive")
    room = np.minimum(x, 1.0 - x)
    h = np.minimum(bump, 2e-3 * room)
    bad = np.flatnonzero(~(h > 0))
    if bad.size:
        raise DomainViolation(int(bad[0]), f"weight {x[bad[0]]!r} leaves no room for a bump")
    return h


def _eval(F, view) -> float:
    v = F.evaluate(view)
    if not np.isfinite(v):
        raise DomainViolation(-1, "functional is not finite at the perturbed state")
    return v


def numeric_vertical_gradient(F: GeneratingFunctional, t: int, mu: MarketWeightPath,
                              aux: AuxPath | None = None, bump: float = 1e-5) -> np.ndarray:
    """Central-difference vertical gradient at grid index `t`.

    Only the current value mu(t) is shifted; past values, including any
    lagged sample, are untouched.
    """
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    view = view_at(mu, aux, t)
    x = view.mu[:, -1].copy()
    h = _bump_sizes(x, bump)
    g = np.empty(x.size)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        g[i] = (_eval(F, view.with_current(up)) - _eval(F, view.with_current(dn))) / (2 * h[i])
    return g


def numeric_hessian(F: GeneratingFunctional, t: int, mu: MarketWeightPath,
                    aux: AuxPath | None = None, bump: float = 1e-4) -> np.ndarray:
    """Second-order central-difference vertical Hessian, symmetrized."""
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    view = view_at(mu, aux, t)
    x = view.mu[:, -1].copy()
    h = _bump_sizes(x, bump)
    d = x.size
    f0 = _eval(F, view)

    def f(shift):
        return _eval(F, view.with_current(x + shift))

    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        H[i, i] = (f(e) - 2 * f0 + f(-e)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = (f(e + ej) - f(e - ej) - f(-e + ej) + f(-e - ej)) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)


def numeric_horizontal_derivatives(F: GeneratingFunctional, t: int, mu: MarketWeightPath,
                                   aux: AuxPath | None = None, h: float = 1,
                                   extrapolate: bool = False) -> np.ndarray:
    """Left-limit horizontal quotients (D_0, D_1, ..., D_m) at grid index `t`.

    The path is stopped at t - h, with h measured in grid steps.  D_0
    compares the stopped path evaluated at t and at t - h; D_k advances
    only the k-th auxiliary coordinate to its time-t value.  A zero
    denominator yields zero.

    Parameters
    ----------
    h : float
        Whole numbers look back along the grid.  A value in (0, 1)
        interpolates the path (weights, aux and any lagged sample)
        linearly inside each grid interval, so small h approximates the
        left limit itself.
    extrapolate : bool
        With fractional h, combine the quotients at h and 2h (Richardson)
        to cancel the first-order error term.
    """
    if t == 0:
        raise AtOrigin()
    if extrapolate:
        if not 0 < h < 0.5:
            raise ValueError("extrapolation needs a fractional lookback below 1/2")
        return 2.0 * numeric_horizontal_derivatives(F, t, mu, aux, h) - numeric_horizontal_derivatives(F, t, mu, aux, 2 * h)
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    view = view_at(mu, aux, t)
    if 0 < h < 1:
        w = float(h)

        def back(a):
            out = a.astype(float, copy=True)
            out[..., 1:] = (1.0 - w) * a[..., 1:] + w * a[..., :-1]
            return out

        past = PathView(back(view.times), back(view.mu), back(view.aux), view.n_pre)
        mu_stop, a_stop = view.mu.copy(), view.aux.copy()
        mu_stop[:, -1] = past.mu[:, -1]
        a_stop[:, -1] = past.aux[:, -1]
        a_then = past.aux[:, -1]
        dt = view.times[-1] - past.times[-1]
    else:
        if h != int(h) or h < 1 or h > t:
            raise ValueError("lookback h must be in (0, 1) or a whole number of steps up to t")
        h = int(h)
        past = view_at(mu, aux, t - h)
        mu_stop = view.mu.copy()
        mu_stop[:, -h:] = mu_stop[:, [-h - 1]]
        a_stop = view.aux.copy()
        a_stop[:, -h:] = a_stop[:, [-h - 1]]
        a_then = view.aux[:, -1 - h]
        dt = view.times[-1] - view.times[-1 - h]
    stopped = PathView(view.times, mu_stop, a_stop, view.n_pre)
    f_stop = _eval(F, stopped)
    out = np.zeros(1 + view.aux.shape[0])
    out[0] = (f_stop - _eval(F, past)) / dt
    for k in range(view.aux.shape[0]):
        da = view.aux[k, -1] - a_then[k]
        if da == 0:
            continue
        a_k = a_stop.copy()
        a_k[k, -1] = view.aux[k, -1]
        out[1 + k] = (_eval(F, PathView(view.times, mu_stop, a_k, view.n_pre)) - f_stop) / da
    return out


# -- integrals and Gamma -----------------------------------------------------

def pathwise_ito_integral(grad_series: np.ndarray, mu: MarketWeightPath, partition=None) -> ItoIntegralSeries:
    """Left-point Riemann sums of grad . d(mu) along a partition.

    Parameters
    ----------
    grad_series : (d, n) array
        Integrand at the partition points (only the left endpoint of each
        interval is used).
    mu : MarketWeightPath
    partition : index array or RefiningPartitionFamily, optional
        Defaults to the data grid.
    """
    idx = _level_indices(mu, partition)
    g = np.asarray(grad_series, dtype=float)
    if g.ndim != 2 or g.shape != (mu.d, idx.size):
        raise LengthMismatch(f"integrand shape {g.shape} does not match ({mu.d}, {idx.size})")
    x = mu.weights[:, idx]
    inc = np.einsum("ij,ij->j", g[:, :-1], np.diff(x, axis=1))
    return ItoIntegralSeries(mu.grid.times[idx], _accumulate(inc))


def _theta_series(F, mu, aux, st: PathStates, numeric: bool) -> np.ndarray:
    if not numeric:
        return F.gradient(st.x, st.y, st.a, st.times)
    return np.column_stack([numeric_vertical_gradient(F, k, mu, aux) for k in range(mu.n)])


def gamma_by_definition(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                        partition=None, numeric: bool = False) -> GammaSeries:
    """Gamma(t) = G(0) - G(t) + left-point integral of theta against mu.

    With `numeric=True` the gradient comes from difference quotients
    instead of the analytic jet.
    """
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    idx = _level_indices(mu, partition)
    st = path_states(F, mu, aux)
    theta = _theta_series(F, mu, aux, st, numeric)[:, idx]
    g = F.value(st.x[:, idx], None if st.y is None else st.y[:, idx], st.a[:, idx], st.times[idx])
    ito = pathwise_ito_integral(theta, mu, idx).values
    return GammaSeries(mu.grid.times[idx], g[0] - g + ito, "by_definition")


def _working_cov(mu, cov):
    if cov is None:
        raise MissingCovariation("a covariation path is required")
    if isinstance(cov, (list, tuple)):
        cov = cov[-1]
    if cov.indices[-1] != mu.n - 1:
        raise LengthMismatch("covariation path does not span the weight path")
    return cov


def _expansion_terms(F, st: PathStates, idx: np.ndarray, dx: np.ndarray):
    """Per-interval horizontal and second-order terms of the Itô expansion.

    Horizontal derivatives are taken at the right end of each interval and
    multiplied by the aux increment over the interval (skipped where the
    increment is zero); D_0 multiplies the time step.  The Hessian is
    taken at the left end and paired with the covariation increment.
    """
    s = st.take(idx)
    n = idx.size
    hor = np.zeros(n - 1)
    da = np.diff(s.a, axis=1)
    if da.size:
        moved = np.flatnonzero(np.any(da != 0, axis=0))
        if moved.size:
            cols = moved + 1
            D = F.horizontal(s.x[:, cols], None if s.y is None else s.y[:, cols], s.a[:, cols], s.times[cols])
            hor[moved] = np.einsum("ij,ij->j", D, da[:, moved])
    D0 = F.time_derivative(s.x[:, 1:], None if s.y is None else s.y[:, 1:], s.a[:, 1:], s.times[1:])
    hor = hor + D0 * np.diff(s.times)
    left = (s.x[:, :-1], None if s.y is None else s.y[:, :-1], s.a[:, :-1], s.times[:-1])
    hd = F.hessian_diagonal(*left)
    if hd is not None:
        sec = 0.5 * np.einsum("ij,ij->j", hd, dx[:, 1:] ** 2)
    else:
        H = F.hessian(*left)
        sec = 0.5 * np.einsum("ik,ijk,jk->k", dx[:, 1:], H, dx[:, 1:])
    return hor, sec


def gamma_by_ito_expansion(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None,
                           cov: CovariationPath | None) -> GammaSeries:
    """Gamma(t) = -sum_k int D_k G dA_k - 1/2 sum_ij int d2_ij G d<mu_i, mu_j>.

    The partition is the one the covariation path was computed on.
    """
    F = F.bind(mu)
    if F.aux_kind != "none" and aux is None:
        raise MissingAux(f"{F.name} needs a {F.aux_kind} path")
    cov = _working_cov(mu, cov)
    aux = resolve_aux(F, mu, aux)
    st = path_states(F, mu, aux)
    hor, sec = _expansion_terms(F, st, cov.indices, cov.dx)
    return GammaSeries(cov.times, -_accumulate(hor + sec), "by_ito_expansion")


def gamma_closed_form(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
                      cov: CovariationPath | None = None) -> GammaSeries | None:
    """Closed-form Gamma on the data grid, or None if F has none."""
    F = F.bind(mu)
    if not F.has_closed_form:
        return None
    aux = resolve_aux(F, mu, aux)
    cov = covariation(mu)[-1] if cov is None else _working_cov(mu, cov)
    if cov.n != mu.n:
        raise LengthMismatch("closed forms are evaluated on the data grid; pass the finest covariation")
    vals = F.closed_form_gamma(path_states(F, mu, aux), cov)
    return None if vals is None else GammaSeries(mu.grid.times, np.asarray(vals, dtype=float), "closed_form")


def verify_ito(F: GeneratingFunctional, mu: MarketWeightPath, aux: AuxPath | None = None,
               partition_levels: RefiningPartitionFamily | int | None = None) -> list[ItoResidual]:
    """Residual of the pathwise functional Itô formula along each level.

    Parameters
    ----------
    F : GeneratingFunctional
    mu : MarketWeightPath
    aux : AuxPath, optional
        Built from `mu` when omitted; coarse levels sample it at their
        partition points.
    partition_levels : RefiningPartitionFamily or int, optional
        Number of dyadic levels, or an explicit family.  Defaults to
        every dyadic level that fits.

    Returns
    -------
    list of ItoResidual
        Coarsest first.  `relative` divides the residual by the largest
        magnitude among the terms of the expansion.
    """
    F = F.bind(mu)
    aux = resolve_aux(F, mu, aux)
    if partition_levels is None or isinstance(partition_levels, int):
        parts = RefiningPartitionFamily.dyadic(mu.grid, partition_levels)
    else:
        parts = partition_levels
    st = path_states(F, mu, aux)
    g = F.value(st.x, st.y, st.a, st.times)
    theta = F.gradient(st.x, st.y, st.a, st.times)
    out = []
    for lev, cov in enumerate(covariation(mu, parts)):
        idx = cov.indices
        dF = g[idx[-1]] - g[idx[0]]
        ito = float(np.sum(np.einsum("ij,ij->j", theta[:, idx[:-1]], cov.dx[:, 1:])))
        hor, sec = _expansion_terms(F, st, idx, cov.dx)
        hor_t, sec_t = float(np.sum(hor)), float(np.sum(sec))
        res = abs(dF - ito - hor_t - sec_t)
        scale = max(abs(dF), abs(ito), abs(hor_t), abs(sec_t))
        out.append(ItoResidual(lev, parts.mesh(lev), res, res / scale if scale > 0 else 0.0,
                               {"dF": dF, "ito": ito, "horizontal": hor_t, "second_order": sec_t}))
    return out
