"""Continuous-time portfolio value and cost process as partition limits.

For a left-continuous strategy ``Z`` the cost process is

    T_t = int M'(s,0) d[Z,Z]
        + 1/2 sum [M'(s, dZ) - M'(s, 0)] dZ^2
        + 1/2 int P'(s,0) y(s) d[Z,Z]
        + 1/4 sum |dZ| dZ [P'(s, dZ) - P'(s, 0)]

with ``y`` the sign of the increment, and the value is

    V_t = V_0 + int Z dM(.,0) + 1/2 int Z d(sgn(dZ) P(.,0)) - T_t.

Each integral is evaluated on every level of a refining partition sequence;
the finest level is reported together with the Cauchy gap to the level
before it.  On a partition, the increment of ``Z`` over ``(t_{i-1}, t_i]``
is the trade executed at ``t_i`` and is weighted with slopes at ``t_i``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .market_model import AssumptionReport, SupplyCurve, check_assumptions
from .partitions import (
    DEFAULT_CAUCHY_TOL,
    LimitReport,
    Partition,
    PartitionSequence,
    level_report,
)
from .portfolio import StrategyPath

COMPONENTS = ("mid_slope_term", "mid_jump_term", "spread_slope_term", "spread_jump_term")
COST_PROCESS_COLUMNS = ("t", "total") + COMPONENTS


def _on(partition: Optional[Partition], x) -> np.ndarray:
    if callable(x):
        if partition is None:
            raise ValueError("a partition is needed to sample a path function")
        return np.asarray(x(partition.times), dtype=float)
    return np.asarray(x, dtype=float)


def ito_increments(integrand, integrator, partition: Optional[Partition] = None) -> np.ndarray:
    f = _on(partition, integrand)
    g = _on(partition, integrator)
    if f.shape[-1] != g.shape[-1]:
        raise ValueError("integrand and integrator lengths differ")
    return f[..., :-1] * np.diff(g, axis=-1)


def ito_integral(integrand, integrator, partition: Optional[Partition] = None):
    """Left-point sum ``sum f(t_{i-1}) (g(t_i) - g(t_{i-1}))``."""
    out = np.sum(ito_increments(integrand, integrator, partition), axis=-1)
    return out if np.ndim(out) else float(out)


def _weight_on(weight, grid: Partition, idx: np.ndarray) -> np.ndarray:
    if callable(weight):
        return np.asarray(weight(grid.times[idx]), dtype=float)
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return np.full(idx.size, float(w))
    return w[..., idx]


def qv_stieltjes_integral(
    weight, strategy: StrategyPath, seq: PartitionSequence, tol: float = DEFAULT_CAUCHY_TOL
) -> LimitReport:
    """``int w d[Z, Z]`` on each level: ``sum w(t_i) (Z_i - Z_{i-1})^2``.

    ``weight`` is a scalar, an array on ``strategy.grid`` or a function of
    time.  No co-jump correction is needed for left-continuous strategies.
    """
    z = strategy.effective()

    def est(p: Partition) -> float:
        idx = p.indices_in(strategy.grid)
        dz = np.diff(z[idx])
        return float(np.sum(_weight_on(weight, strategy.grid, idx)[1:] * dz * dz))

    return level_report(seq, est, tol, label="estimate")


def cost_increments(curve: SupplyCurve, z: np.ndarray) -> dict:
    """The four cost-process summands for trades at ``t_1 .. t_N``."""
    z = np.asarray(z, dtype=float)
    dz = np.diff(z, axis=-1)
    sq = dz * dz
    y = np.sign(dz)
    t = slice(1, None)
    m0 = curve.mid_slope(t, 0.0)
    p0 = curve.spread_slope(t, 0.0)
    return {
        "mid_slope_term": m0 * sq,
        "mid_jump_term": 0.5 * (curve.mid_slope(t, dz) - m0) * sq,
        "spread_slope_term": 0.5 * p0 * y * sq,
        "spread_jump_term": 0.25 * np.abs(dz) * dz * (curve.spread_slope(t, dz) - p0),
    }


def _cumulative(incr: np.ndarray) -> np.ndarray:
    out = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return out


@dataclass
class CostProcessPath:
    grid: Partition
    values: np.ndarray
    components: dict
    levels: LimitReport
    assumptions: AssumptionReport = field(default_factory=AssumptionReport)

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def is_nonnegative(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.values >= -tol))

    def is_nondecreasing(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.values) >= -tol))

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COST_PROCESS_COLUMNS)
            cols = [self.grid.times, self.values] + [self.components[c] for c in COMPONENTS]
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def _levels_of(strategy: StrategyPath, seq: Optional[PartitionSequence]) -> PartitionSequence:
    if seq is None:
        return PartitionSequence((strategy.grid,))
    return seq


def cost_process(
    curve: SupplyCurve,
    market,
    strategy: StrategyPath,
    seq: Optional[PartitionSequence] = None,
    tol: float = DEFAULT_CAUCHY_TOL,
) -> CostProcessPath:
    """Cost process on the finest level of ``seq`` (default: strategy grid).

    Assumption violations at the traded volumes are attached to the result,
    not raised.
    """
    if market is not None and market.grid != strategy.grid:
        raise ValueError("strategy grid does not match the market grid")
    seq = _levels_of(strategy, seq)
    z = strategy.effective()

    def on_level(p: Partition):
        idx = p.indices_in(strategy.grid)
        return cost_increments(curve.restrict(idx), z[idx]), idx

    terminals = []
    for p in seq:
        inc, _ = on_level(p)
        terminals.append(float(sum(np.sum(v) for v in inc.values())))
    inc, idx = on_level(seq.finest)
    comps = {k: _cumulative(v) for k, v in inc.items()}
    values = sum(comps[k] for k in COMPONENTS)
    levels = LimitReport(
        cells=[p.cells for p in seq], mesh=[p.mesh for p in seq],
        estimates=terminals, tol=tol, label="cost",
    )
    # probe each time at zero and at the volume actually traded there
    trades = np.concatenate(([0.0], np.diff(z[idx])))
    report = check_assumptions(curve.restrict(idx), np.stack((np.zeros_like(trades), trades), axis=1))
    return CostProcessPath(seq.finest, values, comps, levels, report)


def cadlag_cost_process(*args, **kwargs):
    """Right-continuous strategies (extra co-jump terms) are not supported."""
    raise NotImplementedError(
        "only left-continuous strategies are implemented; the right-continuous "
        "variant needs the M'(s,0) - M'(s-,0) co-jump terms"
    )


@dataclass
class ValuePath:
    grid: Partition
    values: np.ndarray
    capital_gain: np.ndarray
    spread_carry: np.ndarray
    cost: CostProcessPath
    levels: LimitReport

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


def _value_terms(curve: SupplyCurve, z: np.ndarray):
    dz0 = np.concatenate((z[..., :1], np.diff(z, axis=-1)), axis=-1)
    ptilde = np.sign(dz0) * curve.spread(None, 0.0)
    gain = _cumulative(ito_increments(z, curve.mid(None, 0.0)))
    carry = _cumulative(0.5 * ito_increments(z, ptilde))
    return gain, carry


def continuous_value(
    curve: SupplyCurve,
    market,
    strategy: StrategyPath,
    seq: Optional[PartitionSequence] = None,
    initial_value: float = 0.0,
    tol: float = DEFAULT_CAUCHY_TOL,
) -> ValuePath:
    """``V_t`` on the finest level of ``seq``."""
    seq = _levels_of(strategy, seq)
    cp = cost_process(curve, market, strategy, seq, tol)
    z = strategy.effective()

    def terminal(p: Partition) -> float:
        idx = p.indices_in(strategy.grid)
        c = curve.restrict(idx)
        g, k = _value_terms(c, z[idx])
        tc = sum(np.sum(v) for v in cost_increments(c, z[idx]).values())
        return float(initial_value + g[-1] + k[-1] - tc)

    idx = seq.finest.indices_in(strategy.grid)
    gain, carry = _value_terms(curve.restrict(idx), z[idx])
    values = initial_value + gain + carry - cp.values
    levels = level_report(seq, terminal, tol, label="value") if len(seq) > 1 else LimitReport(
        [seq.finest.cells], [seq.finest.mesh], [float(values[-1])], tol, "value"
    )
    return ValuePath(seq.finest, values, gain, carry, cp, levels)


def ds_literal_cost(curve: SupplyCurve, strategy: StrategyPath, partition: Optional[Partition] = None) -> float:
    """Cost with ``ds`` in place of ``d[Z, Z]``.

    ``int M'(s,0) ds + 1/2 int P'(s,0) y(s) ds``; reported next to the
    quadratic-variation cost for comparison only.
    """
    p = partition or strategy.grid
    idx = p.indices_in(strategy.grid)
    c = curve.restrict(idx)
    z = strategy.effective()[idx]
    y = np.sign(np.diff(z))
    t = slice(1, None)
    dt = p.dt
    return float(np.sum(c.mid_slope(t, 0.0) * dt + 0.5 * c.spread_slope(t, 0.0) * y * dt))


@dataclass
class ConvergenceReport:
    ns: list
    costs: list
    limit_cost: float
    qv: list
    qv_divergent: bool

    @property
    def gaps(self) -> list:
        return [abs(c - self.limit_cost) for c in self.costs]

    @property
    def trend(self) -> float:
        """Share of successive steps where the gap did not grow."""
        g = self.gaps
        if len(g) < 2:
            return 1.0
        return float(np.mean([b <= a + 1e-15 for a, b in zip(g, g[1:])]))

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "T_n", "abs_diff"])
            for n, c, g in zip(self.ns, self.costs, self.gaps):
                w.writerow([n, repr(c), repr(g)])


def cost_convergence_suite(
    sequence: Sequence[StrategyPath],
    limit: StrategyPath,
    curve: SupplyCurve,
    market,
    seq: Optional[PartitionSequence] = None,
    ns: Optional[Sequence] = None,
    qv_cap: Optional[float] = None,
) -> ConvergenceReport:
    """Terminal costs of ``Z_n`` against the cost of ``Z``.

    ``qv_divergent`` is set when some ``[Z_n, Z_n]_T`` is non-finite or
    exceeds ``qv_cap`` (default ``1e3 * max(1, [Z, Z]_T)``).
    """
    ns = list(ns) if ns is not None else list(range(1, len(sequence) + 1))
    lim = cost_process(curve, market, limit, seq).terminal
    fine = (seq.finest if seq is not None else limit.grid)

    def qv_of(s: StrategyPath) -> float:
        z = s.effective()[fine.indices_in(s.grid)]
        return float(np.sum(np.diff(z) ** 2))

    costs = [cost_process(curve, market, s, seq).terminal for s in sequence]
    qvs = [qv_of(s) for s in sequence]
    cap = qv_cap if qv_cap is not None else 1e3 * max(1.0, qv_of(limit))
    divergent = (not np.all(np.isfinite(qvs))) or max(qvs, default=0.0) > cap
    return ConvergenceReport(ns, costs, lim, qvs, bool(divergent))
