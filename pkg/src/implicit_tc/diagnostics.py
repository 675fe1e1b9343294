"""Statistical checks: supermartingale test, arbitrage probe, strategy factory."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .hedging import _mollify_values
from .market_model import (
    GBMParams,
    LinearSupplyCurve,
    SlopeParams,
    SupplyCurve,
    path_rng,
    simulate_mid_paths,
)
from .partitions import Partition
from .portfolio import StrategyPath, ledger_arrays

FAMILIES = (
    "piecewise_constant_random",
    "brownian_sampled",
    "mollified",
    "single_jump",
    "buy_and_hold",
)

SE_THRESHOLD = 3.0

PROBE_HEADER = (
    "# arbitrage probe: finite candidate search for plain arbitrage (NA) only; "
    "free lunches with vanishing risk cannot be represented by a finite probe"
)


@dataclass(frozen=True)
class StrategyGenerator:
    """Factory of random left-continuous test strategies.

    Family parameters (all optional):

    * ``piecewise_constant_random``: ``n_jumps`` (8), ``scale`` (1.0)
    * ``brownian_sampled``: ``scale`` (1.0), the volatility of the holdings
    * ``mollified``: as piecewise constant plus ``mollify_n`` (8)
    * ``single_jump``: ``jump_time`` (T/2), ``jump`` (1.0)
    * ``buy_and_hold``: ``level`` (1.0)

    ``liquidate`` (False) sells everything at the horizon; otherwise the
    last position is only marked.
    """

    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown strategy family {self.family!r}")

    def _p(self, key, default):
        return self.params.get(key, default)

    def generate(self, grid: Partition, path_index: int = 0) -> StrategyPath:
        rng = path_rng(self.seed, path_index)
        n = len(grid)
        fam = self.family
        if fam in ("piecewise_constant_random", "mollified"):
            k = min(int(self._p("n_jumps", 8)), n - 1)
            scale = float(self._p("scale", 1.0))
            at = np.sort(rng.choice(np.arange(1, n), size=k, replace=False))
            levels = scale * rng.uniform(-1.0, 1.0, size=k + 1)
            h = np.full(n, levels[0])
            for j, i in enumerate(at):
                h[i:] = levels[j + 1]
            if fam == "mollified":
                h = _mollify_values(grid.times, h, float(self._p("mollify_n", 8)))
        elif fam == "brownian_sampled":
            z = rng.standard_normal(n - 1)
            h = np.concatenate(([0.0], np.cumsum(float(self._p("scale", 1.0)) * np.sqrt(grid.dt) * z)))
        elif fam == "single_jump":
            t_star = float(self._p("jump_time", grid.T / 2))
            i = int(np.searchsorted(grid.times, t_star, side="left"))
            if not 0 < i < n:
                raise ValueError("jump_time must lie in (0, T)")
            h = np.zeros(n)
            h[i:] = float(self._p("jump", 1.0))
        else:
            h = np.full(n, float(self._p("level", 1.0)))
        terminal = 0.0 if self._p("liquidate", False) else None
        return StrategyPath(grid, h, terminal)

    def batch(self, grid: Partition, path_indices: Sequence[int]) -> np.ndarray:
        """Effective holdings for several path indices, one row each."""
        return np.stack([self.generate(grid, i).effective() for i in path_indices])


@dataclass
class DiagnosticRow:
    test_name: str
    statistic: float
    std_err: float
    threshold: float
    passed: bool


DIAGNOSTIC_COLUMNS = ("test_name", "statistic", "std_err", "threshold", "pass")


def write_diagnostics(rows: Sequence[DiagnosticRow], path: Union[str, Path], header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(DIAGNOSTIC_COLUMNS)
        for r in rows:
            w.writerow([r.test_name, repr(float(r.statistic)), repr(float(r.std_err)),
                        repr(float(r.threshold)), int(r.passed)])


@dataclass
class SupermartingaleResult:
    mean_V_T: float
    std_err: float
    initial_value: float
    n_admissible: int
    n_rejected: int

    @property
    def passed(self) -> bool:
        return self.mean_V_T <= self.initial_value + SE_THRESHOLD * self.std_err

    @property
    def strict_drop(self) -> bool:
        """Mean terminal value below ``V_0`` by more than three standard errors."""
        return self.mean_V_T < self.initial_value - SE_THRESHOLD * self.std_err

    def row(self, name: str = "supermartingale") -> DiagnosticRow:
        return DiagnosticRow(name, self.mean_V_T - self.initial_value, self.std_err,
                             SE_THRESHOLD * self.std_err, self.passed)


def supermartingale_test(
    slopes: SlopeParams,
    gbm: GBMParams,
    generator: StrategyGenerator,
    n_paths: int,
    grid: Partition,
    alpha: float,
    seed: int = 0,
    initial_value: float = 0.0,
) -> SupermartingaleResult:
    """Does ``E[V_T] <= V_0`` hold over admissible generated strategies?

    Paths whose strategy breaches ``V_t >= -alpha`` are dropped.
    """
    if gbm.mu != 0.0:
        raise ValueError("supermartingale test needs mu = 0")
    idx = range(n_paths)
    mid = simulate_mid_paths(gbm, grid, seed, idx)
    g, d = slopes.paths(grid)
    curve = LinearSupplyCurve(g, d, mid)
    z = generator.batch(grid, idx)
    values = ledger_arrays(curve, z, np.full(n_paths, initial_value))["value"]
    ok = np.min(values, axis=-1) >= -alpha
    if not np.any(ok):
        raise ValueError("every generated strategy is inadmissible for this alpha")
    vT = values[ok, -1]
    se = float(np.std(vT, ddof=1) / np.sqrt(vT.size)) if vT.size > 1 else 0.0
    return SupermartingaleResult(float(np.mean(vT)), se, initial_value, int(ok.sum()), int((~ok).sum()))


@dataclass
class ProbeReport:
    flags: list
    means: list
    std_errs: list
    minima: list
    skipped: int = 0
    header: str = PROBE_HEADER

    @property
    def n_flags(self) -> int:
        return len(self.flags)

    def row(self, name: str = "arbitrage_probe") -> DiagnosticRow:
        return DiagnosticRow(name, float(self.n_flags), 0.0, 0.0, self.n_flags == 0)


def arbitrage_probe(
    curve: SupplyCurve,
    candidates: Sequence[StrategyPath],
    alpha: float = np.inf,
    tol: float = 1e-9,
) -> ProbeReport:
    """Look for candidates that never lose and gain on average, from ``V_0 = 0``.

    ``curve`` may be batched (one row per market path).  A candidate is
    flagged when ``min V_T >= -tol`` over paths and ``mean V_T`` exceeds
    three standard errors.  Candidates breaching ``V_t >= -alpha`` are skipped.
    """
    flags, means, ses, minima = [], [], [], []
    skipped = 0
    for k, cand in enumerate(candidates):
        z = cand.effective()
        values = np.atleast_2d(ledger_arrays(curve, z, 0.0)["value"])
        if np.any(values < -alpha):
            skipped += 1
            continue
        vT = values[:, -1]
        m = float(np.mean(vT))
        se = float(np.std(vT, ddof=1) / np.sqrt(vT.size)) if vT.size > 1 else 0.0
        lo = float(np.min(vT))
        means.append(m)
        ses.append(se)
        minima.append(lo)
        if lo >= -tol and m > SE_THRESHOLD * se and m > tol:
            flags.append(k)
    return ProbeReport(flags, means, ses, minima, skipped)
