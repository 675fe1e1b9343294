import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicit_tc.market_model import (
    GBMParams,
    LinearSupplyCurve,
    MarketPath,
    SlopeParams,
    TabulatedSupplyCurve,
    check_assumptions,
    eval_quotes,
    simulate_brownian,
    simulate_mid_gbm,
    simulate_mid_paths,
)
from implicit_tc.partitions import Partition

from conftest import random_tabulated_curve


def test_linear_curve_quotes():
    c = LinearSupplyCurve(0.1, 0.05, np.array([100.0, 101.0]))
    q = eval_quotes(c, 1, 2.0)
    assert q.ask == pytest.approx(101.2)
    assert q.bid == pytest.approx(101.1)
    assert q.mid == pytest.approx(101.15)
    assert q.spread == pytest.approx(0.1)
    assert c.mid_slope(0, 0.0) == pytest.approx(0.075)
    assert c.spread_slope(0, 0.0) == pytest.approx(0.05)
    assert np.all(c.spread(None, 0.0) == 0.0)


def test_curve_index_out_of_range():
    c = LinearSupplyCurve(0.1, 0.1, np.ones(3))
    with pytest.raises(IndexError):
        c.ask(3, 1.0)


def test_tabulated_matches_interpolation(rng):
    c = random_tabulated_curve(rng, 4)
    y = rng.uniform(-150, 150, size=20)
    for t in range(4):
        assert np.allclose(c.ask(t, y), np.interp(y, c.y_grid, c.ask_table[t]))
        assert np.allclose(c.bid(t, y), np.interp(y, c.y_grid, c.bid_table[t]))
    with pytest.raises(ValueError):
        c.ask(0, 1e6)


def test_tabulated_slope_by_finite_difference(rng):
    c = random_tabulated_curve(rng, 2)
    y = np.array([-101.0, -3.0, 7.0, 60.0])  # away from knots
    h = 1e-6
    fd = (c.ask(1, y + h) - c.ask(1, y - h)) / (2 * h)
    assert np.allclose(c.ask_slope(1, y), fd, rtol=1e-6)


def test_assumption_check_flags_negative_bid_slope():
    good = LinearSupplyCurve(0.1, 0.05, np.full(5, 100.0))
    assert check_assumptions(good, [-1.0, 0.0, 1.0]).ok
    delta = np.full(5, 0.05)
    delta[2] = -0.05
    bad = LinearSupplyCurve(0.1, delta, np.full(5, 100.0))
    rep = check_assumptions(bad, [-1.0, 0.0, 1.0])
    assert not rep.ok
    assert rep.conditions() == {"bid_slope>0"}
    assert {v.t_index for v in rep.violations} == {2}


def test_assumption_check_crossed_book():
    y = np.array([-1.0, 0.0, 1.0])
    ask = np.array([[99.0, 100.0, 101.0]])
    bid = np.array([[98.0, 100.0, 102.0]])  # bid above ask for y > 0
    rep = check_assumptions(TabulatedSupplyCurve(y, ask, bid), [0.0, 1.0])
    assert "ask>bid" in rep.conditions()


def test_equal_slopes_lock_the_book():
    # A = B for every y: monotone, but not strictly A > B
    rep = check_assumptions(LinearSupplyCurve(0.05, 0.05, np.full(3, 100.0)), [0.0, 1.0])
    assert rep.conditions() == {"ask>bid"}


def test_per_time_probes():
    delta = np.array([0.1, -0.1, 0.1])
    c = LinearSupplyCurve(0.2, delta, np.full(3, 100.0))
    rep = check_assumptions(c, np.array([[0.0, 1.0], [0.0, 2.0], [0.0, -1.0]]))
    assert {(v.t_index, v.condition) for v in rep.violations} == {(1, "bid_slope>0")}
    with pytest.raises(ValueError):
        check_assumptions(c, np.array([[0.0, 1.0], [1.0, 2.0], [0.0, 1.0]]))


def test_assumption_probe_must_include_zero():
    with pytest.raises(ValueError):
        check_assumptions(LinearSupplyCurve(0.1, 0.1, np.ones(2)), [1.0])


def test_gbm_param_validation():
    with pytest.raises(ValueError):
        GBMParams(sigma=-0.2)
    with pytest.raises(ValueError):
        GBMParams(m0=0.0)


def test_market_path_rejects_nonpositive_mid():
    g = Partition.uniform(1, 2)
    with pytest.raises(ValueError):
        MarketPath(g, np.array([1.0, 0.0, 1.0]), np.zeros(3), np.zeros(3))


def test_gbm_is_a_martingale_and_lognormal():
    # oracle: E[M_T] = M_0 and Var(log M_T) = sigma^2 T when mu = 0
    grid = Partition.uniform(1.0, 16)
    p = GBMParams(0.0, 0.3, 50.0)
    mid = simulate_mid_paths(p, grid, seed=4, path_indices=range(100_000))
    mT = mid[:, -1]
    se = mT.std(ddof=1) / np.sqrt(mT.size)
    assert abs(mT.mean() - 50.0) < 3 * se
    assert np.var(np.log(mT / 50.0)) == pytest.approx(0.09, rel=0.05)


def test_gbm_drift():
    grid = Partition.uniform(2.0, 4)
    mid = simulate_mid_paths(GBMParams(0.1, 0.2, 1.0), grid, 1, range(20000))
    assert mid[:, -1].mean() == pytest.approx(np.exp(0.2), rel=0.01)


def test_path_index_streams_are_independent_of_batching():
    grid = Partition.uniform(1.0, 32)
    p = GBMParams()
    batch = simulate_mid_paths(p, grid, 9, [3, 7, 11])
    for row, k in zip(batch, [3, 7, 11]):
        assert np.array_equal(row, simulate_mid_gbm(p, grid, 9, path_index=k).mid)
    assert not np.array_equal(batch[0], batch[1])


def test_slope_ramp_and_csv(tmp_path):
    grid = Partition.uniform(1.0, 4)
    m = simulate_mid_gbm(GBMParams(), grid, 0, SlopeParams(0.1, 0.2, 0.4, 0.0))
    assert m.gamma == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])
    assert np.all(m.delta == 0.2)
    m.to_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["t", "mid", "gamma", "delta"]
    assert len(rows) == 6


def test_brownian_scaling():
    grid = Partition.uniform(1.0, 8)
    w = np.array([simulate_brownian(grid, 2, sigma=2.0, path_index=i)[-1] for i in range(5000)])
    assert np.var(w) == pytest.approx(4.0, rel=0.08)


@settings(max_examples=40, deadline=None)
@given(
    gamma=st.floats(1e-4, 1.0),
    delta=st.floats(1e-4, 1.0),
    m=st.floats(1.0, 1e4),
    y=st.floats(-1e3, 1e3),
)
def test_linear_curve_ordering(gamma, delta, m, y):
    c = LinearSupplyCurve(gamma, delta, np.array([m]))
    assert c.mid(0, 0.0) == m
    assert c.ask(0, 0.0) == c.bid(0, 0.0)
    # under positive slopes, buying more costs more per share
    assert c.ask(0, abs(y) + 1) >= c.ask(0, abs(y))
