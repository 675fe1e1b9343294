"""Discrete self-financing ledger at volume-dependent quotes.

Conventions
-----------
``holdings[i]`` is the stock position chosen at grid time ``t_i`` and held
over ``(t_i, t_{i+1}]`` (left-continuous strategy).  The trade at ``t_i`` is
``holdings[i] - holdings[i-1]``; buys pay the ask ``A(t_i, dz)``, sales
receive the bid ``B(t_i, dz)``.  The initial position ``holdings[0]`` is
established at the marginal quote, so ``V_0`` equals the supplied initial
value.  Positions are marked with the sign of the trade just made:
``V = z0 + z1 * (M(t, 0) + sgn/2 * P(t, 0))``.  No interest accrues on cash.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np

from .market_model import SupplyCurve
from .partitions import Partition


@dataclass(frozen=True)
class StrategyPath:
    """Stock holdings sampled on ``grid``.

    ``terminal_holding`` is the position carried past the horizon.  When it
    is a number it replaces ``holdings[-1]`` (0 = liquidate at ``T``); when
    ``None`` the last sample is used as given ("mark only").
    """

    grid: Partition
    holdings: np.ndarray
    terminal_holding: Optional[float] = 0.0

    def __post_init__(self) -> None:
        h = np.asarray(self.holdings, dtype=float)
        if h.shape != (len(self.grid),):
            raise ValueError("holdings must have one value per grid point")
        if not np.all(np.isfinite(h)):
            raise ValueError("holdings must be finite")
        if self.terminal_holding is not None and not np.isfinite(self.terminal_holding):
            raise ValueError("terminal holding must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "holdings", h)

    @property
    def initial_holding(self) -> float:
        return float(self.holdings[0])

    def effective(self) -> np.ndarray:
        """Holdings with the terminal convention applied."""
        h = self.holdings.copy()
        if self.terminal_holding is not None:
            h[-1] = self.terminal_holding
        return h

    def trades(self) -> np.ndarray:
        """``dZ`` at every grid time; ``dZ_0`` is the initial position."""
        h = self.effective()
        return np.concatenate(([h[0]], np.diff(h)))

    def signs(self) -> np.ndarray:
        """``sgn(dZ_t)``, with ``sgn(Z_0)`` at time 0."""
        return np.sign(self.trades())

    def restrict(self, partition: Partition) -> "StrategyPath":
        """Same strategy, rebalanced only at the points of ``partition``."""
        idx = partition.indices_in(self.grid)
        return StrategyPath(Partition(self.grid.times[idx]), self.holdings[idx], self.terminal_holding)


# ----------------------------------------------------------------------
# single-step primitives
# ----------------------------------------------------------------------


def rebalance_cash(curve: SupplyCurve, t_index, dz):
    """Cash exchanged for a trade of ``dz`` shares at ``t_index``.

    Buys (``dz >= 0``) pay ``A(t, dz)`` per share and sales receive
    ``B(t, dz)``; no Taylor truncation.
    """
    dz = np.asarray(dz, dtype=float)
    buy = -curve.ask(t_index, dz) * dz
    sell = -curve.bid(t_index, dz) * dz
    out = np.where(dz >= 0.0, buy, sell)
    return out if out.ndim else float(out)


def mark_to_market(curve: SupplyCurve, t_index, z0, z1, sign):
    sign = np.asarray(sign)
    if np.any(np.abs(sign) > 1) or np.any(sign != np.round(sign)):
        raise ValueError("sign must be -1, 0 or 1")
    mark = curve.mid(t_index, 0.0) + 0.5 * sign * curve.spread(t_index, 0.0)
    out = np.asarray(z0 + z1 * mark, dtype=float)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# ledger
# ----------------------------------------------------------------------


class LedgerEntry(NamedTuple):
    t: float
    z0: float
    z1: float
    trade: float
    cash_flow: float
    value: float
    sign: int


LEDGER_COLUMNS = ("t", "z0", "z1", "trade", "cash_flow", "value", "sign")


def ledger_arrays(curve: SupplyCurve, z1: np.ndarray, initial_value) -> dict:
    """Vectorised ledger columns; ``z1`` may carry leading batch axes."""
    z1 = np.asarray(z1, dtype=float)
    n = z1.shape[-1]
    if n != curve.n_times:
        raise ValueError("strategy and curve grids differ")
    mid0 = curve.mid(None, 0.0)
    spr0 = curve.spread(None, 0.0)
    shape = np.broadcast_shapes(z1.shape, np.shape(mid0), np.shape(spr0))
    z1 = np.broadcast_to(z1, shape)
    mid0 = np.broadcast_to(mid0, shape)
    spr0 = np.broadcast_to(spr0, shape)
    trade = np.concatenate((z1[..., :1], np.diff(z1, axis=-1)), axis=-1)
    sign = np.sign(trade)
    cash = np.empty(shape)
    cash[..., 1:] = rebalance_cash(curve, slice(1, None), trade[..., 1:])
    cash[..., 0] = -z1[..., 0] * (mid0[..., 0] + 0.5 * sign[..., 0] * spr0[..., 0])
    z0 = np.asarray(initial_value, dtype=float)[..., None] + np.cumsum(cash, axis=-1)
    value = z0 + z1 * (mid0 + 0.5 * sign * spr0)
    return {"z0": z0, "z1": z1, "trade": trade, "cash_flow": cash, "value": value, "sign": sign}


@dataclass
class Ledger:
    t: np.ndarray
    z0: np.ndarray
    z1: np.ndarray
    trade: np.ndarray
    cash_flow: np.ndarray
    value: np.ndarray
    sign: np.ndarray
    initial_value: float
    nonpositive_quotes: bool = False

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[LedgerEntry]:
        for row in zip(self.t, self.z0, self.z1, self.trade, self.cash_flow, self.value, self.sign):
            yield LedgerEntry(*(float(v) for v in row[:-1]), int(row[-1]))

    def __getitem__(self, i: int) -> LedgerEntry:
        return LedgerEntry(
            float(self.t[i]), float(self.z0[i]), float(self.z1[i]), float(self.trade[i]),
            float(self.cash_flow[i]), float(self.value[i]), int(self.sign[i]),
        )

    @property
    def terminal_value(self) -> float:
        return float(self.value[-1])

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LEDGER_COLUMNS)
            for e in self:
                w.writerow([repr(e.t), repr(e.z0), repr(e.z1), repr(e.trade),
                            repr(e.cash_flow), repr(e.value), e.sign])


def run_ledger(
    curve: SupplyCurve,
    market,
    strategy: StrategyPath,
    initial_cash: float,
) -> Ledger:
    """Apply every rebalance of ``strategy`` and mark the book after each.

    ``initial_cash`` is the portfolio value ``V_0`` (cash left after the
    initial position is set up at the marginal quote).  ``market`` supplies
    the grid; pass ``None`` to take the strategy grid as authoritative.
    """
    if market is not None and market.grid != strategy.grid:
        raise ValueError("strategy grid does not match the market grid")
    if curve.n_times != len(strategy.grid):
        raise ValueError("strategy grid does not match the curve")
    cols = ledger_arrays(curve, strategy.effective(), initial_cash)
    tr = cols["trade"][1:]
    quotes_bad = bool(np.any(curve.ask(slice(1, None), tr) <= 0) or np.any(curve.bid(slice(1, None), tr) <= 0))
    return Ledger(
        t=strategy.grid.times.copy(),
        sign=cols["sign"].astype(int),
        initial_value=float(initial_cash),
        nonpositive_quotes=quotes_bad,
        **{k: cols[k] for k in ("z0", "z1", "trade", "cash_flow", "value")},
    )


def self_financing_residuals(curve: SupplyCurve, ledger: Ledger) -> np.ndarray:
    """Relative residual of ``dZ0 + M(dz)dz + P(dz)/2 sgn dz`` per rebalance."""
    dz = ledger.trade[1:]
    t = slice(1, None)
    lhs = ledger.cash_flow[1:]
    rhs = -curve.mid(t, dz) * dz - 0.5 * curve.spread(t, dz) * np.sign(dz) * dz
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(lhs - rhs) / scale, 0.0)
    return rel


# ----------------------------------------------------------------------
# cost decomposition
# ----------------------------------------------------------------------


def cost_terms(curve: SupplyCurve, z1: np.ndarray) -> dict:
    """Per-rebalance cost pieces for trades at ``t_1 .. t_N``.

    The Taylor remainders are taken as exact finite differences, so
    ``price_impact = mid_slope + mid_remainder`` and
    ``spread_impact = spread_slope + spread_remainder`` hold exactly.
    """
    z1 = np.asarray(z1, dtype=float)
    dz = np.diff(z1, axis=-1)
    s = np.sign(dz)
    t = slice(1, None)
    m0, md = curve.mid(t, 0.0), curve.mid(t, dz)
    p0, pd = curve.spread(t, 0.0), curve.spread(t, dz)
    m_slope = curve.mid_slope(t, 0.0)
    p_slope = curve.spread_slope(t, 0.0)
    price_impact = (md - m0) * dz
    spread_impact = 0.5 * (pd - p0) * s * dz
    mid_slope = m_slope * dz * dz
    spread_slope = 0.5 * p_slope * s * dz * dz
    return {
        "price_impact": price_impact,
        "spread_impact": spread_impact,
        "total": price_impact + spread_impact,
        "implicit": 0.5 * pd * s * dz,
        "mid_slope": mid_slope,
        "mid_remainder": price_impact - mid_slope,
        "spread_slope": spread_slope,
        "spread_remainder": spread_impact - spread_slope,
    }


@dataclass
class CostDecomposition:
    initial_value: float
    terminal_value: float
    capital_gain: float
    spread_carry: float
    implicit_cost: float
    price_impact: float
    spread_impact: float
    total_cost: float
    mid_slope_cost: float
    mid_remainder: float
    spread_slope_cost: float
    spread_remainder: float
    residual: float

    def to_csv(self, path: Union[str, Path]) -> None:
        row = asdict(self)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(row))
            w.writerow([repr(float(v)) for v in row.values()])


COST_COLUMNS = tuple(f.name for f in fields(CostDecomposition))


def decompose_costs(ledger: Ledger, curve: SupplyCurve, market=None) -> CostDecomposition:
    """Split ``V_T - V_0`` into gains, spread carry and transaction costs.

    ``V_T = V_0 + capital_gain + spread_carry - total_cost`` where
    ``total_cost = price_impact + spread_impact``.  ``residual`` is the
    relative misfit of that identity.
    """
    if curve.n_times != len(ledger):
        raise ValueError("ledger and curve grids differ")
    if market is not None and market.grid.times.shape != ledger.t.shape:
        raise ValueError("ledger and market grids differ")
    z1 = ledger.z1
    held = z1[:-1]
    mid0 = curve.mid(None, 0.0)
    carry = ledger.sign * curve.spread(None, 0.0)
    gain = float(np.sum(held * np.diff(mid0)))
    spread_carry = float(np.sum(0.5 * held * np.diff(carry)))
    c = cost_terms(curve, z1)
    tot = {k: float(np.sum(v)) for k, v in c.items()}
    v0, vT = ledger.initial_value, ledger.terminal_value
    recon = v0 + gain + spread_carry - tot["total"]
    scale = max(1.0, abs(v0), abs(vT), abs(gain), abs(spread_carry), abs(tot["total"]))
    return CostDecomposition(
        initial_value=v0,
        terminal_value=vT,
        capital_gain=gain,
        spread_carry=spread_carry,
        implicit_cost=tot["implicit"],
        price_impact=tot["price_impact"],
        spread_impact=tot["spread_impact"],
        total_cost=tot["total"],
        mid_slope_cost=tot["mid_slope"],
        mid_remainder=tot["mid_remainder"],
        spread_slope_cost=tot["spread_slope"],
        spread_remainder=tot["spread_remainder"],
        residual=abs(vT - recon) / scale,
    )


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    min_value: float
    first_violation_time: Optional[float]


def admissibility_check(ledger: Ledger, alpha: float) -> Admissibility:
    """``V_t >= -alpha`` at every grid time."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    bad = np.nonzero(ledger.value < -alpha)[0]
    first = float(ledger.t[bad[0]]) if bad.size else None
    return Admissibility(bad.size == 0, float(np.min(ledger.value)), first)
