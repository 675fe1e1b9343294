"""Volume-dependent quotes and the mid-price simulator.

Quotes are functions of a grid index ``t`` and a signed order size ``y``
(shares, positive = buy):

* ask ``A(t, y)``, bid ``B(t, y)``
* mid ``M(t, y) = (A + B) / 2``, spread ``P(t, y) = A - B``

The linear curve is ``A = gamma_t * y + M(t, 0)`` and
``B = delta_t * y + M(t, 0)``.  Quotes are never clamped; a non-positive
quote is reported through :attr:`QuoteSet.nonpositive`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .partitions import Partition

Index = Union[int, np.ndarray, slice, None]


def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Counter-based (Philox) stream for one Monte Carlo path.

    Streams are keyed on ``(seed, path_index)`` only, so a path's draws do
    not depend on how paths are split across workers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


# ----------------------------------------------------------------------
# quotes
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class QuoteSet:
    ask: np.ndarray
    bid: np.ndarray
    mid: np.ndarray
    spread: np.ndarray
    ask_slope: np.ndarray
    bid_slope: np.ndarray

    @property
    def nonpositive(self) -> bool:
        """True if any evaluated ask or bid is <= 0."""
        return bool(np.any(self.ask <= 0.0) or np.any(self.bid <= 0.0))


class SupplyCurve:
    """Common surface of the ask/bid supply curves.

    Subclasses implement :meth:`ask`, :meth:`bid`, :meth:`ask_slope` and
    :meth:`bid_slope`; everything else is derived.
    """

    n_times: int

    def ask(self, t: Index, y) -> np.ndarray:
        raise NotImplementedError

    def bid(self, t: Index, y) -> np.ndarray:
        raise NotImplementedError

    def ask_slope(self, t: Index, y) -> np.ndarray:
        raise NotImplementedError

    def bid_slope(self, t: Index, y) -> np.ndarray:
        raise NotImplementedError

    def restrict(self, idx: np.ndarray) -> "SupplyCurve":
        raise NotImplementedError

    def mid(self, t: Index, y) -> np.ndarray:
        return 0.5 * (self.ask(t, y) + self.bid(t, y))

    def spread(self, t: Index, y) -> np.ndarray:
        return self.ask(t, y) - self.bid(t, y)

    def mid_slope(self, t: Index, y) -> np.ndarray:
        return 0.5 * (self.ask_slope(t, y) + self.bid_slope(t, y))

    def spread_slope(self, t: Index, y) -> np.ndarray:
        return self.ask_slope(t, y) - self.bid_slope(t, y)

    def marginal_mid(self) -> np.ndarray:
        return self.mid(None, 0.0)

    def marginal_spread(self) -> np.ndarray:
        return self.spread(None, 0.0)

    def _check_index(self, t: Index) -> Index:
        if t is None or isinstance(t, slice):
            return slice(None) if t is None else t
        arr = np.asarray(t)
        if arr.dtype.kind not in "iu":
            raise TypeError("time index must be an integer")
        if np.any(arr < 0) or np.any(arr >= self.n_times):
            raise IndexError(f"time index out of range [0, {self.n_times})")
        return t


def eval_quotes(curve: SupplyCurve, t_index: Index, y) -> QuoteSet:
    """All quotes at grid index ``t_index`` for order size ``y``."""
    a = np.asarray(curve.ask(t_index, y), dtype=float)
    b = np.asarray(curve.bid(t_index, y), dtype=float)
    return QuoteSet(
        ask=a,
        bid=b,
        mid=0.5 * (a + b),
        spread=a - b,
        ask_slope=np.asarray(curve.ask_slope(t_index, y), dtype=float),
        bid_slope=np.asarray(curve.bid_slope(t_index, y), dtype=float),
    )


class LinearSupplyCurve(SupplyCurve):
    """``A = gamma*y + M0``, ``B = delta*y + M0`` with per-time slopes.

    ``gamma``, ``delta`` and ``mid`` may carry leading batch axes (one row per
    simulated path); the last axis is time.
    """

    kind = "linear"

    def __init__(self, gamma, delta, mid):
        mid = np.asarray(mid, dtype=float)
        n = mid.shape[-1]
        gamma = np.asarray(gamma, dtype=float)
        delta = np.asarray(delta, dtype=float)
        # scalar slopes mean constant in time
        self.gamma = np.broadcast_to(gamma, (n,)) if gamma.ndim == 0 else gamma
        self.delta = np.broadcast_to(delta, (n,)) if delta.ndim == 0 else delta
        if self.gamma.shape[-1] != n or self.delta.shape[-1] != n:
            raise ValueError("slope paths must match the mid path length")
        self.mid0 = mid
        self.n_times = n

    @classmethod
    def from_market(cls, market: "MarketPath") -> "LinearSupplyCurve":
        return cls(market.gamma, market.delta, market.mid)

    def ask(self, t, y):
        t = self._check_index(t)
        return self.gamma[..., t] * y + self.mid0[..., t]

    def bid(self, t, y):
        t = self._check_index(t)
        return self.delta[..., t] * y + self.mid0[..., t]

    def ask_slope(self, t, y):
        t = self._check_index(t)
        return np.broadcast_to(self.gamma[..., t], np.broadcast(self.gamma[..., t], y).shape)

    def bid_slope(self, t, y):
        t = self._check_index(t)
        return np.broadcast_to(self.delta[..., t], np.broadcast(self.delta[..., t], y).shape)

    def marginal_mid(self):
        return self.mid0

    def marginal_spread(self):
        return np.zeros_like(self.mid0)

    def restrict(self, idx):
        return LinearSupplyCurve(
            self.gamma[..., idx], self.delta[..., idx], self.mid0[..., idx]
        )


class TabulatedSupplyCurve(SupplyCurve):
    """Ask and bid tabulated on a volume grid, piecewise linear in ``y``.

    ``ask_table`` and ``bid_table`` have shape ``(n_times, n_y)``.  Slopes
    are the slopes of the bracketing segment (right segment at a knot), so a
    flat stretch of the table shows up as a zero slope.
    """

    kind = "tabulated"

    def __init__(self, y_grid, ask_table, bid_table):
        yg = np.asarray(y_grid, dtype=float)
        at = np.asarray(ask_table, dtype=float)
        bt = np.asarray(bid_table, dtype=float)
        if yg.ndim != 1 or yg.size < 2 or np.any(np.diff(yg) <= 0):
            raise ValueError("y_grid must be strictly increasing with >= 2 points")
        if at.ndim != 2 or at.shape != bt.shape or at.shape[1] != yg.size:
            raise ValueError("tables must have shape (n_times, len(y_grid))")
        self.y_grid, self.ask_table, self.bid_table = yg, at, bt
        self.n_times = at.shape[0]

    def _locate(self, t, y):
        t = self._check_index(t)
        tt = np.arange(self.n_times)[t]
        tt, yy = np.broadcast_arrays(tt, np.asarray(y, dtype=float))
        lo, hi = self.y_grid[0], self.y_grid[-1]
        if np.any(yy < lo) or np.any(yy > hi):
            raise ValueError(f"order size outside tabulated range [{lo}, {hi}]")
        j = np.clip(np.searchsorted(self.y_grid, yy, side="right") - 1, 0, self.y_grid.size - 2)
        h = self.y_grid[j + 1] - self.y_grid[j]
        w = (yy - self.y_grid[j]) / h
        return tt, j, w, h

    def _value(self, table, t, y):
        tt, j, w, _ = self._locate(t, y)
        return table[tt, j] * (1.0 - w) + table[tt, j + 1] * w

    def _slope(self, table, t, y):
        tt, j, _, h = self._locate(t, y)
        return (table[tt, j + 1] - table[tt, j]) / h

    def ask(self, t, y):
        return self._value(self.ask_table, t, y)

    def bid(self, t, y):
        return self._value(self.bid_table, t, y)

    def ask_slope(self, t, y):
        return self._slope(self.ask_table, t, y)

    def bid_slope(self, t, y):
        return self._slope(self.bid_table, t, y)

    def restrict(self, idx):
        return TabulatedSupplyCurve(self.y_grid, self.ask_table[idx], self.bid_table[idx])


# ----------------------------------------------------------------------
# assumption checks
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    t_index: int
    y: float
    condition: str  # "ask_slope>0", "bid_slope>0" or "ask>bid"


@dataclass
class AssumptionReport:
    violations: list = field(default_factory=list)
    probes: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def conditions(self) -> set:
        return {v.condition for v in self.violations}


def check_assumptions(curve: SupplyCurve, y_probe: Sequence[float]) -> AssumptionReport:
    """Probe monotonicity (A' > 0, B' > 0) and A > B for y > 0.

    ``y_probe`` is either one set of volumes used at every time, or an array
    of shape ``(n_times, k)`` with a row of volumes per time; each set must
    contain 0.  Violations are collected, never raised.
    """
    y = np.asarray(y_probe, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("probe volumes must be finite")
    if y.ndim == 2:
        if y.shape[0] != curve.n_times:
            raise ValueError("per-time probes need one row per grid time")
        if not np.all(np.any(y == 0.0, axis=1)):
            raise ValueError("every probe row must contain 0")
        yy = y
    else:
        if not np.any(y == 0.0):
            raise ValueError("probe range must contain 0")
        yy = y[None, :]
    tt = np.arange(curve.n_times)[:, None]
    a_s = curve.ask_slope(tt, yy)
    b_s = curve.bid_slope(tt, yy)
    spread = curve.spread(tt, yy)
    tt, yy = np.broadcast_arrays(tt, yy)
    # batch curves: a probe fails if it fails on any path
    reduce_axes = tuple(range(a_s.ndim - 2))
    checks = [
        ("ask_slope>0", a_s <= 0.0),
        ("bid_slope>0", b_s <= 0.0),
        ("ask>bid", (spread <= 0.0) & (yy > 0.0)),
    ]
    report = AssumptionReport(probes=int(tt.size))
    for name, bad in checks:
        if reduce_axes:
            bad = np.any(bad, axis=reduce_axes)
        for i, j in zip(*np.nonzero(bad)):
            report.violations.append(Violation(int(tt[i, j]), float(yy[i, j]), name))
    return report


# ----------------------------------------------------------------------
# market paths
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class GBMParams:
    mu: float = 0.0
    sigma: float = 0.2
    m0: float = 100.0

    def __post_init__(self) -> None:
        if not self.m0 > 0:
            raise ValueError("initial mid m0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class SlopeParams:
    """Constant slopes plus an optional linear ramp over the horizon."""

    gamma: float = 0.0
    delta: float = 0.0
    gamma_ramp: float = 0.0
    delta_ramp: float = 0.0

    def paths(self, grid: Partition) -> tuple:
        s = grid.times / grid.T
        return self.gamma + self.gamma_ramp * s, self.delta + self.delta_ramp * s


@dataclass(frozen=True)
class MarketPath:
    grid: Partition
    mid: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    seed: Optional[int] = None
    params: Optional[GBMParams] = None

    def __post_init__(self) -> None:
        n = len(self.grid)
        for name in ("mid", "gamma", "delta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one value per grid point")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.mid <= 0.0):
            raise ValueError("mid values must be strictly positive")

    def curve(self) -> LinearSupplyCurve:
        return LinearSupplyCurve.from_market(self)

    def restrict(self, partition: Partition) -> "MarketPath":
        idx = partition.indices_in(self.grid)
        return MarketPath(
            Partition(self.grid.times[idx]),
            self.mid[idx],
            self.gamma[idx],
            self.delta[idx],
            self.seed,
            self.params,
        )

    def with_slopes(self, slopes: SlopeParams) -> "MarketPath":
        g, d = slopes.paths(self.grid)
        return MarketPath(self.grid, self.mid, g, d, self.seed, self.params)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mid", "gamma", "delta"])
            for row in zip(self.grid.times, self.mid, self.gamma, self.delta):
                w.writerow([repr(float(v)) for v in row])


def _gbm_row(params: GBMParams, dt: np.ndarray, z: np.ndarray) -> np.ndarray:
    # exact log-normal transition
    incr = (params.mu - 0.5 * params.sigma**2) * dt + params.sigma * np.sqrt(dt) * z
    out = np.empty(z.shape[:-1] + (z.shape[-1] + 1,))
    out[..., 0] = 0.0
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return params.m0 * np.exp(out)


def simulate_mid_gbm(
    params: GBMParams,
    grid: Partition,
    seed: int,
    slopes: Optional[SlopeParams] = None,
    path_index: int = 0,
) -> MarketPath:
    """One geometric Brownian mid path, exact in law at the grid times."""
    if len(grid) < 2:
        raise ValueError("empty grid")
    z = path_rng(seed, path_index).standard_normal(grid.cells)
    mid = _gbm_row(params, grid.dt, z)
    g, d = (slopes or SlopeParams()).paths(grid)
    return MarketPath(grid, mid, g, d, seed, params)


def simulate_mid_paths(
    params: GBMParams, grid: Partition, seed: int, path_indices: Sequence[int]
) -> np.ndarray:
    """Mid paths for several path indices, shape ``(len(path_indices), N+1)``.

    Row ``k`` equals ``simulate_mid_gbm(..., path_index=path_indices[k]).mid``.
    """
    z = np.stack([path_rng(seed, i).standard_normal(grid.cells) for i in path_indices]) \
        if len(path_indices) else np.empty((0, grid.cells))
    return _gbm_row(params, grid.dt, z)


def simulate_brownian(
    grid: Partition, seed: int, sigma: float = 1.0, path_index: int = 0
) -> np.ndarray:
    """Scaled Brownian motion ``sigma * W`` sampled on ``grid`` (W_0 = 0)."""
    z = path_rng(seed, path_index).standard_normal(grid.cells)
    w = np.empty(len(grid))
    w[0] = 0.0
    np.cumsum(sigma * np.sqrt(grid.dt) * z, out=w[1:])
    return w
