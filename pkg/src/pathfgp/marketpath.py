"""Capitalization data, market weights, auxiliary paths and realized covariation.

All containers are frozen dataclasses holding numpy arrays that are
marked read-only after validation, so a path can be shared freely
between workers.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    DeltaNotOnGrid,
    InsufficientHistory,
    MalformedRow,
    NonFiniteValue,
    NonPositiveTotalCap,
    PartitionOffGrid,
    UnsupportedKind,
)

__all__ = [
    "TimeGrid",
    "CapitalizationPath",
    "MarketWeightPath",
    "RefiningPartitionFamily",
    "CovariationPath",
    "AuxPath",
    "AUX_KINDS",
    "CsvSpec",
    "load_capitalizations",
    "write_capitalizations",
    "to_market_weights",
    "covariation",
    "aux_path",
    "write_covariation_csv",
]

AUX_KINDS = (
    "none",
    "running_max",
    "running_min",
    "moving_average",
    "quadratic_variation",
    "covariation_matrix",
)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times."""

    times: np.ndarray

    def __post_init__(self):
        t = _frozen(self.times)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.isfinite(t)):
            raise ValueError("time grid contains non-finite values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def index_of(self, t: float) -> int:
        """Grid index of time `t`; raises PartitionOffGrid when absent."""
        k = int(np.searchsorted(self.times, t))
        if k < self.times.size and self.times[k] == t:
            return k
        raise PartitionOffGrid(t)


@dataclass(frozen=True)
class CapitalizationPath:
    """Per-asset capitalizations on a time grid (d x N)."""

    grid: TimeGrid
    caps: np.ndarray
    asset_ids: tuple = ()

    def __post_init__(self):
        caps = _frozen(self.caps)
        if caps.ndim == 1:
            caps = _frozen(caps[None, :])
        d, n = caps.shape
        if n != len(self.grid):
            raise ValueError(f"caps have {n} columns but the grid has {len(self.grid)} points")
        if not np.all(np.isfinite(caps)):
            bad = np.argwhere(~np.isfinite(caps))[0]
            raise NonFiniteValue(int(bad[1]) + 2, int(bad[0]) + 1)
        if np.any(caps < 0):
            raise ValueError("capitalizations must be nonnegative")
        total = caps.sum(axis=0)
        bad = np.flatnonzero(total <= 0)
        if bad.size:
            raise NonPositiveTotalCap(float(self.grid.times[bad[0]]))
        if np.any(caps[:, 0] <= 0):
            raise ValueError("capitalizations at the first date must be strictly positive")
        ids = tuple(self.asset_ids) or tuple(f"asset_{i + 1}" for i in range(d))
        if len(ids) != d:
            raise ValueError("asset_ids length does not match the number of assets")
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "asset_ids", ids)

    @property
    def d(self) -> int:
        return self.caps.shape[0]

    @property
    def n(self) -> int:
        return self.caps.shape[1]

    @property
    def total(self) -> np.ndarray:
        return self.caps.sum(axis=0)

    def scaled(self, c: float) -> "CapitalizationPath":
        return CapitalizationPath(self.grid, self.caps * c, self.asset_ids)


@dataclass(frozen=True)
class MarketWeightPath:
    """Market weights mu = S / Sigma on the trading grid.

    `pre_history` holds weights observed before the time origin (oldest
    first); delayed functionals read their lagged samples from it.
    """

    grid: TimeGrid
    weights: np.ndarray
    pre_history: np.ndarray | None = None
    asset_ids: tuple = ()

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2 or w.shape[1] != len(self.grid):
            raise ValueError("weights must be d x N matching the grid")
        for block, name in ((w, "weights"), (self.pre_history, "pre_history")):
            if block is None:
                continue
            block = np.asarray(block, dtype=float)
            if block.size and np.max(np.abs(block.sum(axis=0) - 1.0)) > 1e-12:
                raise ValueError(f"{name} columns must lie on the simplex")
            if np.any(block < 0) or np.any(block > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        pre = None if self.pre_history is None else _frozen(self.pre_history)
        if pre is not None and pre.shape[0] != w.shape[0]:
            raise ValueError("pre_history must have one row per asset")
        ids = tuple(self.asset_ids) or tuple(f"asset_{i + 1}" for i in range(w.shape[0]))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "pre_history", pre)
        object.__setattr__(self, "asset_ids", ids)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.weights.shape[1]

    @property
    def n_pre(self) -> int:
        return 0 if self.pre_history is None else self.pre_history.shape[1]

    @property
    def full(self) -> np.ndarray:
        """Pre-history and trading-grid weights side by side, d x (n_pre + N)."""
        if self.pre_history is None:
            return self.weights
        return np.concatenate([self.pre_history, self.weights], axis=1)

    @classmethod
    def from_array(cls, weights, times=None, pre_history=None) -> "MarketWeightPath":
        """Build from a raw array, renormalizing columns onto the simplex."""
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        w = w / w.sum(axis=0, keepdims=True)
        if pre_history is not None:
            pre_history = np.asarray(pre_history, dtype=float)
            pre_history = pre_history / pre_history.sum(axis=0, keepdims=True)
        times = np.arange(w.shape[1], dtype=float) if times is None else times
        return cls(TimeGrid(times), w, pre_history)

    def truncated(self, k: int) -> "MarketWeightPath":
        """Path stopped at grid index `k` (inclusive)."""
        return MarketWeightPath(TimeGrid(self.grid.times[: k + 1]), self.weights[:, : k + 1],
                                self.pre_history, self.asset_ids)


# -- partitions and covariation ---------------------------------------------

@dataclass(frozen=True)
class RefiningPartitionFamily:
    """Nested partitions of the data grid, coarsest first.

    Each level is stored as an increasing array of grid indices that
    always contains the first and last grid points.
    """

    grid: TimeGrid
    levels: tuple

    def __post_init__(self):
        n = len(self.grid)
        levels = []
        for lev in self.levels:
            idx = np.unique(np.asarray(lev, dtype=np.int64))
            if idx.size < 2 or idx[0] != 0 or idx[-1] != n - 1:
                raise ValueError("each level must contain the first and last grid points")
            if idx[-1] >= n or idx[0] < 0:
                raise PartitionOffGrid(int(idx[-1]))
            idx.setflags(write=False)
            levels.append(idx)
        for a, b in zip(levels[:-1], levels[1:]):
            if not np.all(np.isin(a, b)):
                raise ValueError("partition levels are not nested")
        object.__setattr__(self, "levels", tuple(levels))

    @classmethod
    def dyadic(cls, grid: TimeGrid, n_levels: int | None = None) -> "RefiningPartitionFamily":
        """Levels with strides 2**(L-1), ..., 2, 1; the finest is the data grid.

        Coarse levels also keep the terminal point so that every level
        spans the whole horizon.
        """
        n = len(grid)
        max_levels = int(np.floor(np.log2(n - 1))) + 1
        n_levels = max_levels if n_levels is None else int(n_levels)
        if n_levels < 1 or n_levels > max_levels:
            raise ValueError(f"between 1 and {max_levels} dyadic levels fit on {n} points")
        levels = []
        for j in range(n_levels):
            stride = 2 ** (n_levels - 1 - j)
            idx = np.arange(0, n, stride)
            if idx[-1] != n - 1:
                idx = np.append(idx, n - 1)
            levels.append(idx)
        return cls(grid, tuple(levels))

    @classmethod
    def from_times(cls, grid: TimeGrid, levels: Iterable[Sequence[float]]) -> "RefiningPartitionFamily":
        """Build from explicit time lists; every time must lie on the grid."""
        return cls(grid, tuple([grid.index_of(t) for t in lev] for lev in levels))

    def __len__(self) -> int:
        return len(self.levels)

    def mesh(self, level: int) -> float:
        return float(np.max(np.diff(self.grid.times[self.levels[level]])))

    def successor(self, level: int, t: float) -> float:
        """Smallest partition point of `level` strictly after `t` (or the horizon)."""
        pts = self.grid.times[self.levels[level]]
        k = int(np.searchsorted(pts, t, side="right"))
        return float(pts[min(k, pts.size - 1)])

    @property
    def finest(self) -> np.ndarray:
        return self.levels[-1]


@dataclass(frozen=True)
class CovariationPath:
    """Realized covariation along one partition level.

    Only the weight increments are stored; cumulative matrices are
    produced on demand so that large universes never materialize a
    d x d x N array.  `carry` is the covariation accumulated over the
    pre-history, if any.
    """

    times: np.ndarray
    indices: np.ndarray
    dx: np.ndarray
    carry: np.ndarray | None = None

    def __post_init__(self):
        for name in ("times", "dx"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))
        if self.carry is not None:
            object.__setattr__(self, "carry", _frozen(self.carry))

    @property
    def d(self) -> int:
        return self.dx.shape[0]

    @property
    def n(self) -> int:
        return self.dx.shape[1]

    def increment(self, k: int) -> np.ndarray:
        """Increment matrix between partition points k-1 and k."""
        v = self.dx[:, k]
        return np.outer(v, v)

    def matrix(self, k: int) -> np.ndarray:
        """Cumulative covariation matrix at partition point k."""
        v = self.dx[:, : k + 1]
        m = v @ v.T
        m = 0.5 * (m + m.T)
        return m if self.carry is None else m + self.carry

    def diagonal(self) -> np.ndarray:
        """Cumulative quadratic variations <mu_i>(t), d x n."""
        q = np.cumsum(self.dx * self.dx, axis=1)
        if self.carry is not None:
            q = q + np.diag(self.carry)[:, None]
        return q

    def diagonal_increments(self) -> np.ndarray:
        return self.dx * self.dx

    def pair(self, i: int, j: int) -> np.ndarray:
        """Cumulative <mu_i, mu_j> along the level."""
        s = np.cumsum(self.dx[i] * self.dx[j])
        return s if self.carry is None else s + self.carry[i, j]

    def cumulative(self) -> np.ndarray:
        """All cumulative matrices, n x d x d; intended for small d only."""
        inc = self.dx.T[:, :, None] * self.dx.T[:, None, :]
        out = np.cumsum(inc, axis=0)
        return out if self.carry is None else out + self.carry[None]


def covariation(mu: MarketWeightPath, parts: RefiningPartitionFamily | None = None) -> list[CovariationPath]:
    """Realized covariation of the weights along each partition level.

    Parameters
    ----------
    mu : MarketWeightPath
    parts : RefiningPartitionFamily, optional
        Defaults to the single-level family consisting of the data grid.

    Returns
    -------
    list of CovariationPath
        One per level, coarsest first; the last one is the working
        covariation used by the rest of the engine.
    """
    if parts is None:
        parts = RefiningPartitionFamily(mu.grid, (np.arange(mu.n),))
    if len(parts.grid) != mu.n or np.any(parts.grid.times != mu.grid.times):
        raise PartitionOffGrid(float(parts.grid.times[-1]))
    carry = None
    if mu.n_pre:
        pre = np.concatenate([mu.pre_history, mu.weights[:, :1]], axis=1)
        dp = np.diff(pre, axis=1)
        carry = dp @ dp.T
        carry = 0.5 * (carry + carry.T)
    out = []
    for idx in parts.levels:
        x = mu.weights[:, idx]
        dx = np.zeros_like(x)
        dx[:, 1:] = np.diff(x, axis=1)
        out.append(CovariationPath(mu.grid.times[idx], idx, dx, carry))
    return out


def write_covariation_csv(cov: CovariationPath, fh: IO[str], max_d: int = 200) -> None:
    """Write cumulative covariations in long format `t,i,j,value` (i <= j)."""
    if cov.d > max_d:
        raise ValueError(f"refusing to write {cov.d}x{cov.d} covariation tables; raise max_d")
    fh.write("t,i,j,value\n")
    iu, ju = np.triu_indices(cov.d)
    cum = cov.cumulative()
    for k, t in enumerate(cov.times):
        vals = cum[k][iu, ju]
        fh.write("".join(f"{t:.10g},{i + 1},{j + 1},{v:.17g}\n" for i, j, v in zip(iu, ju, vals)))


# -- auxiliary finite-variation paths ---------------------------------------

@dataclass(frozen=True)
class AuxPath:
    """Finite-variation companion path A (m x N) with its increments."""

    times: np.ndarray
    kind: str
    values: np.ndarray
    increments: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "values", "increments"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def sampled(self, idx) -> "AuxPath":
        """Aux path observed only at grid indices `idx`."""
        v = self.values[:, idx]
        inc = np.zeros_like(v)
        inc[:, 1:] = np.diff(v, axis=1)
        return AuxPath(self.times[idx], self.kind, v, inc, dict(self.params))


def _increments(values: np.ndarray) -> np.ndarray:
    inc = np.zeros_like(values)
    inc[:, 1:] = np.diff(values, axis=1)
    return inc


def aux_path(mu: MarketWeightPath, kind: str, **params) -> AuxPath:
    """Construct a finite-variation auxiliary path from the weights.

    Parameters
    ----------
    mu : MarketWeightPath
    kind : str
        One of ``running_max``, ``running_min``, ``moving_average``,
        ``quadratic_variation``, ``covariation_matrix`` or ``none``.
    **params
        ``delta`` (whole grid steps) for the moving average.

    Notes
    -----
    The moving average over the window [t - delta, t] is the trapezoid
    rule on the grid samples in the window, scaled by 1/delta.  Samples
    before the time origin come from the pre-history when it covers the
    window, otherwise they are taken as mu(0).  Every value at index k
    uses weights up to index k only.
    """
    w = mu.weights
    if kind == "none":
        v = np.zeros((0, mu.n))
    elif kind == "running_max":
        v = np.maximum.accumulate(w, axis=1)
    elif kind == "running_min":
        v = np.minimum.accumulate(w, axis=1)
    elif kind == "moving_average":
        delta = params.get("delta")
        if delta is None or float(delta) != int(delta) or int(delta) <= 0:
            raise DeltaNotOnGrid(f"moving-average window {delta!r} is not a positive whole number of grid steps")
        delta = int(delta)
        if mu.n_pre >= delta:
            head = mu.pre_history[:, -delta:]
        else:
            head = np.repeat(w[:, :1], delta, axis=1)
        ext = np.concatenate([head, w], axis=1)
        c = np.cumsum(np.concatenate([np.zeros((mu.d, 1)), ext], axis=1), axis=1)
        # trapezoid rule over the delta steps ending at each grid index
        window = c[:, delta + 1:] - c[:, : mu.n]
        v = (window - 0.5 * (ext[:, : mu.n] + w)) / delta
        params = {"delta": delta}
    elif kind == "quadratic_variation":
        v = covariation(mu)[-1].diagonal()
    elif kind == "covariation_matrix":
        if mu.d > 64:
            raise UnsupportedKind("covariation_matrix aux paths are limited to d <= 64")
        v = covariation(mu)[-1].cumulative().reshape(mu.n, -1).T
    else:
        raise UnsupportedKind(f"unknown auxiliary path kind {kind!r}")
    return AuxPath(mu.grid.times, kind, v, _increments(v), dict(params))


# -- CSV ingestion ----------------------------------------------------------

@dataclass(frozen=True)
class CsvSpec:
    """Layout of a capitalization table."""

    delimiter: str = ","
    time_column: int = 0


def _parse_time(text: str, line: int):
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return _dt.date.fromisoformat(text.strip()).toordinal()
    except ValueError as exc:
        raise MalformedRow(line, f"unreadable date {text!r}") from exc


def load_capitalizations(source, fmt: CsvSpec = CsvSpec()) -> CapitalizationPath:
    """Read a capitalization table `date,asset_1,...,asset_d`.

    Parameters
    ----------
    source : path, bytes, or text/binary stream
    fmt : CsvSpec

    Returns
    -------
    CapitalizationPath
        Times are numeric as given, or proleptic Gregorian day ordinals
        when the date column holds ISO dates.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_capitalizations(fh, fmt)
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, io.BufferedIOBase) or (hasattr(source, "mode") and "b" in getattr(source, "mode", "")):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(source, delimiter=fmt.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(1, "empty input") from None
    ncol = len(header)
    if ncol < 2:
        raise MalformedRow(1, "header needs a date column and at least one asset")
    tc = fmt.time_column
    ids = tuple(h.strip() for k, h in enumerate(header) if k != tc)
    times, rows = [], []
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != ncol:
            raise MalformedRow(line, f"expected {ncol} cells, found {len(row)}")
        times.append(_parse_time(row[tc], line))
        cells = row[:tc] + row[tc + 1:]
        try:
            vals = np.array(cells, dtype=float)
        except ValueError:
            for k, c in enumerate(cells):
                try:
                    float(c)
                except ValueError:
                    raise NonFiniteValue(line, k + 2, c) from None
            raise MalformedRow(line)
        if not np.all(np.isfinite(vals)):
            k = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise NonFiniteValue(line, k + 2, cells[k])
        if np.any(vals < 0):
            raise MalformedRow(line, "negative capitalization")
        rows.append(vals)
    if len(rows) < 2:
        raise MalformedRow(len(rows) + 2, "at least two data rows are required")
    times = np.asarray(times, dtype=float)
    caps = np.vstack(rows).T
    total = caps.sum(axis=0)
    bad = np.flatnonzero(total <= 0)
    if bad.size:
        raise NonPositiveTotalCap(float(times[bad[0]]))
    if np.any(np.diff(times) <= 0):
        k = int(np.flatnonzero(np.diff(times) <= 0)[0])
        raise MalformedRow(k + 3, "dates are not strictly increasing")
    return CapitalizationPath(TimeGrid(times), caps, ids)


def write_capitalizations(caps: CapitalizationPath, fh: IO[str]) -> None:
    """Write a capitalization table in the format read by load_capitalizations."""
    fh.write(",".join(("date",) + caps.asset_ids) + "\n")
    table = np.column_stack([caps.grid.times, caps.caps.T])
    np.savetxt(fh, table, delimiter=",", fmt="%.17g")


def to_market_weights(caps: CapitalizationPath, pre_history_days: int = 0) -> MarketWeightPath:
    """Normalize capitalizations to market weights.

    The first `pre_history_days` columns become pre-history and the time
    origin moves to the first remaining day.
    """
    n0 = int(pre_history_days)
    if n0 < 0:
        raise ValueError("pre_history_days must be nonnegative")
    if n0 >= caps.n - 1:
        raise InsufficientHistory(f"{n0} pre-history days leave fewer than two trading days out of {caps.n}")
    w = caps.caps / caps.total[None, :]
    # second pass pins column sums to one as tightly as double allows
    w = w / w.sum(axis=0, keepdims=True)
    times = caps.grid.times
    if n0:
        return MarketWeightPath(TimeGrid(times[n0:] - times[n0]), w[:, n0:], w[:, :n0], caps.asset_ids)
    return MarketWeightPath(caps.grid, w, None, caps.asset_ids)
