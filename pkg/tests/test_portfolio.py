import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicit_tc.market_model import LinearSupplyCurve, simulate_mid_gbm, GBMParams, SlopeParams
from implicit_tc.partitions import Partition
from implicit_tc.portfolio import (
    COST_COLUMNS,
    LEDGER_COLUMNS,
    StrategyPath,
    admissibility_check,
    cost_terms,
    decompose_costs,
    ledger_arrays,
    mark_to_market,
    rebalance_cash,
    run_ledger,
    self_financing_residuals,
)

from conftest import random_linear_curve, random_strategy, random_tabulated_curve


def flat(n, gamma=0.1, delta=0.05, m=100.0):
    return LinearSupplyCurve(gamma, delta, np.full(n, m))


def test_rebalance_cash_buy_and_sell():
    c = flat(2)
    assert rebalance_cash(c, 1, 2.0) == pytest.approx(-(100.0 + 0.2) * 2.0)
    assert rebalance_cash(c, 1, -2.0) == pytest.approx((100.0 - 0.1) * 2.0)
    assert rebalance_cash(c, 1, 0.0) == 0.0


def test_mark_uses_sign_of_last_trade():
    y = np.array([-1.0, 0.0, 1.0])
    from implicit_tc.market_model import TabulatedSupplyCurve
    c = TabulatedSupplyCurve(y, np.array([[99.5, 100.5, 101.5]]), np.array([[98.5, 99.5, 100.5]]))
    assert mark_to_market(c, 0, 0.0, 2.0, 1) == pytest.approx(2 * 100.5)
    assert mark_to_market(c, 0, 0.0, 2.0, -1) == pytest.approx(2 * 99.5)
    assert mark_to_market(c, 0, 0.0, 2.0, 0) == pytest.approx(2 * 100.0)
    with pytest.raises(ValueError):
        mark_to_market(c, 0, 0.0, 1.0, 2)


def test_round_trip_oracle():
    # buy h, sell h at an unchanged mid: lose (gamma + delta) h^2
    gamma, delta, h = 0.1, 0.05, 3.0
    grid = Partition.uniform(1.0, 3)
    s = StrategyPath(grid, np.array([0.0, h, 0.0, 0.0]))
    led = run_ledger(flat(4, gamma, delta), None, s, 10.0)
    assert led.terminal_value == pytest.approx(10.0 - (gamma + delta) * h * h, rel=1e-14)
    dec = decompose_costs(led, flat(4, gamma, delta))
    assert dec.total_cost == pytest.approx((gamma + delta) * h * h, rel=1e-14)
    # mid pieces (g+d)/2 h^2 on each leg; spread pieces +-(g-d)/2 h^2 cancel
    assert dec.price_impact == pytest.approx((gamma + delta) * h * h, rel=1e-14)
    assert dec.spread_impact == pytest.approx(0.0, abs=1e-12)
    assert dec.capital_gain == 0.0


def test_marks_follow_the_worked_example():
    # marginal ask 101, bid 99: long 3 after a buy, short 5 after a sale, -2 untraded
    from implicit_tc.market_model import TabulatedSupplyCurve
    y = np.array([-10.0, 0.0, 10.0])
    c = TabulatedSupplyCurve(y, np.array([[100.0, 101.0, 102.0]]), np.array([[98.0, 99.0, 100.0]]))
    assert mark_to_market(c, 0, -10.0, 3.0, 1) == pytest.approx(-10.0 + 3 * 101.0)
    assert mark_to_market(c, 0, 600.0, -5.0, -1) == pytest.approx(600.0 - 5 * 99.0)
    assert mark_to_market(c, 0, 250.0, -2.0, 0) == pytest.approx(250.0 - 2 * 100.0)


def test_initial_value_is_respected():
    grid = Partition.uniform(1.0, 4)
    s = StrategyPath(grid, np.full(5, 2.0), None)
    led = run_ledger(flat(5), None, s, 7.0)
    assert led.value[0] == pytest.approx(7.0)
    assert led.z0[0] == pytest.approx(7.0 - 200.0)
    assert led.terminal_value == pytest.approx(7.0)  # nothing moves


def test_terminal_conventions():
    grid = Partition.uniform(1.0, 2)
    h = np.array([0.0, 1.0, 1.0])
    assert StrategyPath(grid, h).effective()[-1] == 0.0
    assert StrategyPath(grid, h, None).effective()[-1] == 1.0
    assert list(StrategyPath(grid, h, None).trades()) == [0.0, 1.0, 0.0]


def test_grid_mismatch_raises():
    m = simulate_mid_gbm(GBMParams(), Partition.uniform(1, 4), 0)
    s = StrategyPath(Partition.uniform(1, 2), np.zeros(3))
    with pytest.raises(ValueError):
        run_ledger(m.curve(), m, s, 0.0)


def test_restricted_strategy_trades_at_coarse_points():
    grid = Partition.uniform(1.0, 4)
    s = StrategyPath(grid, np.array([0.0, 1.0, 2.0, 3.0, 4.0]), None)
    r = s.restrict(Partition.uniform(1.0, 2))
    assert list(r.holdings) == [0.0, 2.0, 4.0]


def test_ledger_csv_header(tmp_path):
    grid = Partition.uniform(1.0, 2)
    led = run_ledger(flat(3), None, StrategyPath(grid, np.array([0.0, 1.0, 0.0])), 0.0)
    led.to_csv(tmp_path / "l.csv")
    dec = decompose_costs(led, flat(3))
    dec.to_csv(tmp_path / "c.csv")
    assert next(csv.reader(open(tmp_path / "l.csv"))) == list(LEDGER_COLUMNS)
    assert tuple(next(csv.reader(open(tmp_path / "c.csv")))) == COST_COLUMNS
    assert len(list(led)) == 3 and led[1].sign == 1


def test_admissibility():
    grid = Partition.uniform(1.0, 3)
    mid = np.array([100.0, 90.0, 80.0, 70.0])
    s = StrategyPath(grid, np.array([1.0, 1.0, 1.0, 1.0]), None)
    led = run_ledger(LinearSupplyCurve(0.1, 0.05, mid), None, s, 0.0)
    a = admissibility_check(led, 15.0)
    assert not a.admissible and a.first_violation_time == pytest.approx(2 / 3)
    assert admissibility_check(led, 30.0).admissible
    with pytest.raises(ValueError):
        admissibility_check(led, -1.0)


def test_ledger_batches_agree_with_single_paths(rng):
    n = 12
    curves = [random_linear_curve(rng, n) for _ in range(3)]
    batch = LinearSupplyCurve(
        np.stack([c.gamma for c in curves]), np.stack([c.delta for c in curves]),
        np.stack([c.mid0 for c in curves]),
    )
    z = np.cumsum(rng.standard_normal((3, n)), axis=1)
    vb = ledger_arrays(batch, z, np.zeros(3))["value"]
    for k, c in enumerate(curves):
        assert np.allclose(vb[k], ledger_arrays(c, z[k], 0.0)["value"], rtol=1e-14, atol=1e-12)


def test_spread_impact_can_be_negative():
    # a sale with gamma > delta: P(dZ) < P(0) = 0, so the spread piece is negative;
    # the total (B(dZ) - B(0)) dZ = delta dZ^2 stays positive
    c = flat(2, 0.1, 0.05)
    t = cost_terms(c, np.array([0.0, -1.0]))
    assert t["spread_impact"][0] == pytest.approx(-0.025)
    assert t["total"][0] == pytest.approx(0.05)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tabulated=st.booleans(), liquidate=st.booleans())
def test_ledger_invariants(seed, tabulated, liquidate):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    grid = Partition(np.linspace(0.0, 1.0, n))
    curve = random_tabulated_curve(rng, n) if tabulated else random_linear_curve(rng, n)
    s = random_strategy(rng, grid, scale=10.0, liquidate=liquidate)
    v0 = float(rng.uniform(-100, 100))
    led = run_ledger(curve, None, s, v0)
    assert np.max(self_financing_residuals(curve, led), initial=0.0) <= 1e-12
    dec = decompose_costs(led, curve)
    assert dec.residual < 1e-10
    terms = cost_terms(curve, led.z1)
    # total and price impact are non-negative under monotone curves
    assert np.all(terms["total"] >= -1e-12)
    assert np.all(terms["price_impact"] >= -1e-12)
    dz = led.trade[1:]
    paid = -led.cash_flow[1:]
    a0 = curve.ask(slice(1, None), 0.0)
    b0 = curve.bid(slice(1, None), 0.0)
    buy, sell = dz > 0, dz < 0
    tol = 1e-12 * np.maximum(1.0, np.abs(a0))
    assert np.all(paid[buy] / dz[buy] >= a0[buy] - tol[buy])
    assert np.all(a0 >= b0 - tol)
    assert np.all(paid[sell] / dz[sell] <= b0[sell] + tol[sell])
