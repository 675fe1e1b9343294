"""Shared builders for randomized curves and strategies."""
from __future__ import annotations

import numpy as np
import pytest

from implicit_tc.market_model import LinearSupplyCurve, TabulatedSupplyCurve
from implicit_tc.partitions import Partition
from implicit_tc.portfolio import StrategyPath

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_grid(rng: np.random.Generator, n: int, T: float = 1.0) -> Partition:
    u = np.sort(rng.uniform(0.0, T, size=n - 1))
    return Partition(np.unique(np.concatenate(([0.0], u, [T]))))


def random_mid(rng: np.random.Generator, n: int, m0: float = 100.0) -> np.ndarray:
    return m0 * np.exp(np.concatenate(([0.0], np.cumsum(0.02 * rng.standard_normal(n - 1)))))


def random_strategy(rng: np.random.Generator, grid: Partition, scale: float = 5.0,
                    p_trade: float = 0.5, liquidate: bool = True) -> StrategyPath:
    n = len(grid)
    steps = np.where(rng.uniform(size=n) < p_trade, scale * rng.standard_normal(n), 0.0)
    h = np.clip(np.cumsum(steps), -90.0, 90.0)  # trades stay inside tabulated volumes
    return StrategyPath(grid, h, 0.0 if liquidate else None)


def random_linear_curve(rng: np.random.Generator, n: int, valid: bool = True) -> LinearSupplyCurve:
    if valid:
        # gamma > delta > 0: monotone curves with A > B for y > 0
        gamma = rng.uniform(1e-3, 0.2, size=n)
        delta = gamma * rng.uniform(0.1, 0.9, size=n)
    else:
        gamma = rng.uniform(-0.2, 0.2, size=n)
        delta = rng.uniform(-0.2, 0.2, size=n)
    return LinearSupplyCurve(gamma, delta, random_mid(rng, n))


def random_tabulated_curve(rng: np.random.Generator, n: int, y_max: float = 200.0,
                           k: int = 9) -> TabulatedSupplyCurve:
    """Strictly increasing, piecewise-linear ask and bid with ``A(0) >= B(0)``."""
    y = np.linspace(-y_max, y_max, 2 * k + 1)
    mid = random_mid(rng, n)
    half = rng.uniform(0.0, 0.05, size=n)  # half of the marginal spread
    dy = np.diff(y)
    ask_s = rng.uniform(0.005, 0.2, size=(n, y.size - 1))
    bid_s = rng.uniform(0.005, 0.2, size=(n, y.size - 1))
    zero = k

    def table(slopes, level):
        t = np.zeros((n, y.size))
        t[:, 1:] = np.cumsum(slopes * dy, axis=1)
        return t - t[:, [zero]] + level[:, None]

    return TabulatedSupplyCurve(y, table(ask_s, mid + half), table(bid_s, mid - half))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
