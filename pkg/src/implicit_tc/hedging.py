"""Delta hedging a physically delivered call in the linear-quote economy."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr

from .continuous_limit import cost_increments
from .market_model import GBMParams, LinearSupplyCurve, SlopeParams, simulate_mid_paths
from .partitions import Partition
from .portfolio import StrategyPath, cost_terms, ledger_arrays

CHUNK = 500


@dataclass(frozen=True)
class CallSpec:
    strike: float
    maturity: float
    sigma: float
    payoff_convention: str = "bid_delivery"

    def __post_init__(self) -> None:
        if not (self.strike > 0 and self.maturity > 0 and self.sigma > 0):
            raise ValueError("strike, maturity and sigma must be positive")
        if self.payoff_convention != "bid_delivery":
            raise ValueError(f"unknown payoff convention {self.payoff_convention!r}")


def _d1(mid, K, sigma, tau):
    return (np.log(mid / K) + 0.5 * sigma**2 * tau) / (sigma * np.sqrt(tau))


def bs_call_price(mid, K, sigma, tau):
    """Black-Scholes call value with zero rate; intrinsic value at ``tau=0``."""
    mid, tau = np.broadcast_arrays(np.asarray(mid, dtype=float), np.asarray(tau, dtype=float))
    shape = mid.shape
    mid, tau = mid.ravel(), tau.ravel()
    out = np.maximum(mid - K, 0.0)
    live = tau > 0
    if np.any(live):
        m, t = mid[live], tau[live]
        d1 = _d1(m, K, sigma, t)
        d2 = d1 - sigma * np.sqrt(t)
        out[live] = m * ndtr(d1) - K * ndtr(d2)
    return out.reshape(shape) if shape else float(out[0])


def bs_call_delta(mid, K, sigma, tau):
    """``Phi(d1)``; at ``tau=0`` the limit ``1{mid > K}``."""
    mid, tau = np.broadcast_arrays(np.asarray(mid, dtype=float), np.asarray(tau, dtype=float))
    shape = mid.shape
    mid, tau = mid.ravel(), tau.ravel()
    out = (mid > K).astype(float)
    live = tau > 0
    if np.any(live):
        out[live] = ndtr(_d1(mid[live], K, sigma, tau[live]))
    return out.reshape(shape) if shape else float(out[0])


def payoff_call(terminal_bid_marginal, K):
    b = np.asarray(terminal_bid_marginal, dtype=float)
    if np.any(b < 0):
        raise ValueError("terminal bid must be non-negative")
    out = np.maximum(b - K, 0.0)
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------
# mollification
# ----------------------------------------------------------------------


def _mollify_values(times: np.ndarray, values: np.ndarray, n: float) -> np.ndarray:
    w = 1.0 / n
    dt = np.diff(times)
    integral = np.zeros_like(values)
    np.cumsum(0.5 * (values[..., 1:] + values[..., :-1]) * dt, axis=-1, out=integral[..., 1:])
    # I(s - w) by linear interpolation; zero history before time 0
    s = times - w
    j = np.clip(np.searchsorted(times, s, side="right") - 1, 0, times.size - 2)
    frac = np.clip((s - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0)
    lagged = integral[..., j] * (1.0 - frac) + integral[..., j + 1] * frac
    lagged = np.where(s <= 0.0, 0.0, lagged)
    return n * (integral - lagged)


def mollify_strategy(strategy: StrategyPath, n: float) -> StrategyPath:
    """Running average ``n * int_{s-1/n}^s Z_u du`` with ``Z_u = 0`` for ``u < 0``.

    The integral is trapezoidal on the strategy grid; the window ``1/n`` must
    span at least one grid cell and at most the horizon.
    """
    if n < 1:
        raise ValueError("smoothing level n must be >= 1")
    g = strategy.grid
    if 1.0 / n > g.T:
        raise ValueError("window 1/n exceeds the horizon")
    if 1.0 / n < g.mesh:
        raise ValueError("window 1/n is narrower than a grid cell")
    out = _mollify_values(g.times, strategy.holdings, n)
    return StrategyPath(g, out, strategy.terminal_holding)


# ----------------------------------------------------------------------
# Monte Carlo hedge
# ----------------------------------------------------------------------


@dataclass
class HedgeReport:
    n_paths: int
    rebalance_cells: int
    mollify_n: float
    option_price: float
    mean_terminal_value: float
    mean_payoff: float
    mean_total_cost: float
    total_cost_se: float
    l2_error: float
    l2_error_se: float
    cost_integral_prediction: float
    prediction_se: float
    ds_literal_prediction: float
    mean_delta_qv: float
    identity_gap_rms: float
    runtime_seconds: float = 0.0

    def csv_row(self) -> dict:
        row = asdict(self)
        row.pop("runtime_seconds")  # keeps report files reproducible
        return row

    def to_csv(self, path: Union[str, Path]) -> None:
        write_report_rows([self], path)


HEDGE_REPORT_COLUMNS = tuple(f.name for f in fields(HedgeReport) if f.name != "runtime_seconds")
HEDGE_PATH_COLUMNS = ("path_index", "terminal_value", "payoff", "total_cost", "prediction")


def write_report_rows(reports, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEDGE_REPORT_COLUMNS)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.csv_row().values()])


def write_path_detail(detail: dict, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEDGE_PATH_COLUMNS)
        for row in zip(*(detail[c] for c in HEDGE_PATH_COLUMNS)):
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def delta_holdings(mid: np.ndarray, call: CallSpec, grid: Partition) -> np.ndarray:
    """Delta at every rebalance date, held unchanged through maturity."""
    tau = call.maturity - grid.times
    h = np.empty_like(mid)
    h[..., :-1] = bs_call_delta(mid[..., :-1], call.strike, call.sigma, tau[:-1])
    h[..., -1] = h[..., -2]
    return h


def _hedge_chunk(args) -> dict:
    call, slopes, gbm, grid, mollify_n, seed, lo, hi, v0 = args
    mid = simulate_mid_paths(gbm, grid, seed, range(lo, hi))
    h = delta_holdings(mid, call, grid)
    if mollify_n:
        h = _mollify_values(grid.times, h, mollify_n)
        h[..., -1] = h[..., -2]
    gamma, delta = slopes.paths(grid)
    curve = LinearSupplyCurve(gamma, delta, mid)
    cols = ledger_arrays(curve, h, np.full(hi - lo, v0))
    cost = np.sum(cost_terms(curve, h)["total"], axis=-1)
    pred = sum(np.sum(v, axis=-1) for v in cost_increments(curve, h).values())
    y = np.sign(np.diff(h, axis=-1))
    t = slice(1, None)
    ds = np.sum(curve.mid_slope(t, 0.0) * grid.dt + 0.5 * curve.spread_slope(t, 0.0) * y * grid.dt, axis=-1)
    return {
        "path_index": np.arange(lo, hi),
        "terminal_value": cols["value"][:, -1],
        "payoff": payoff_call(curve.bid(len(grid) - 1, 0.0), call.strike),
        "total_cost": cost,
        "prediction": pred,
        "ds_literal": ds,
        "qv": np.sum(np.diff(h, axis=-1) ** 2, axis=-1),
    }


def _jackknife_rms(e: np.ndarray) -> tuple:
    n = e.size
    sq = e * e
    rms = float(np.sqrt(np.mean(sq)))
    if n < 2:
        return rms, float("nan")
    loo = np.sqrt((np.sum(sq) - sq) / (n - 1))
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return rms, se


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")


def run_hedge_experiment(
    call: CallSpec,
    slopes: SlopeParams,
    gbm: GBMParams,
    grid: Partition,
    n_paths: int,
    mollify_n: float = 0,
    seed: int = 0,
    workers: int = 1,
    return_paths: bool = False,
):
    """Hedge the call with its frictionless delta on every simulated path.

    Initial value is the Black-Scholes price at time 0; the position is not
    rebalanced at maturity (physical delivery).  Returns a
    :class:`HedgeReport`, plus the per-path columns if ``return_paths``.
    """
    if gbm.mu != 0.0:
        raise ValueError(
            "hedge experiments require mu = 0 (the reference measure must be "
            "the martingale measure; measure changes are not supported)"
        )
    if abs(grid.T - call.maturity) > 1e-12 * call.maturity:
        raise ValueError("grid horizon must equal the option maturity")
    if gbm.sigma != call.sigma:
        raise ValueError("option sigma must equal the simulated volatility")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if mollify_n:
        if 1.0 / mollify_n < grid.mesh:
            raise ValueError("window 1/n is narrower than a grid cell")
        if 1.0 / mollify_n > grid.T:
            raise ValueError("window 1/n exceeds the horizon")
    start = time.perf_counter()
    v0 = bs_call_price(gbm.m0, call.strike, call.sigma, call.maturity)
    jobs = [
        (call, slopes, gbm, grid, mollify_n, seed, lo, min(lo + CHUNK, n_paths), v0)
        for lo in range(0, n_paths, CHUNK)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_hedge_chunk, jobs))
    else:
        parts = [_hedge_chunk(j) for j in jobs]
    detail = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    err = detail["terminal_value"] - detail["payoff"]
    l2, l2_se = _jackknife_rms(err)
    gap = detail["terminal_value"] - (detail["payoff"] - detail["prediction"])
    report = HedgeReport(
        n_paths=n_paths,
        rebalance_cells=grid.cells,
        mollify_n=float(mollify_n),
        option_price=v0,
        mean_terminal_value=float(np.mean(detail["terminal_value"])),
        mean_payoff=float(np.mean(detail["payoff"])),
        mean_total_cost=float(np.mean(detail["total_cost"])),
        total_cost_se=_se(detail["total_cost"]),
        l2_error=l2,
        l2_error_se=l2_se,
        cost_integral_prediction=float(np.mean(detail["prediction"])),
        prediction_se=_se(detail["prediction"]),
        ds_literal_prediction=float(np.mean(detail["ds_literal"])),
        mean_delta_qv=float(np.mean(detail["qv"])),
        identity_gap_rms=float(np.sqrt(np.mean(gap * gap))),
        runtime_seconds=time.perf_counter() - start,
    )
    return (report, detail) if return_paths else report
