import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from implicit_tc.market_model import simulate_brownian
from implicit_tc.partitions import (
    LimitReport,
    Partition,
    PartitionSequence,
    SampledPath,
    dyadic_levels,
    make_dyadic,
    make_random,
    quadratic_variation,
    realized_qv,
    thinned_levels,
)


def test_partition_rejects_bad_grids():
    with pytest.raises(ValueError):
        Partition(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        Partition(np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        Partition(np.array([0.0]))
    with pytest.raises(ValueError):
        Partition(np.array([0.0, np.nan]))


def test_uniform_properties():
    p = Partition.uniform(2.0, 8)
    assert p.cells == 8 and len(p) == 9
    assert p.T == 2.0
    assert p.mesh == pytest.approx(0.25)
    assert p.times.flags.writeable is False


def test_make_dyadic_meshes_halve():
    seq = make_dyadic(1.0, 5)
    assert [p.cells for p in seq] == [2, 4, 8, 16, 32]
    assert all(b.mesh == a.mesh / 2 for a, b in zip(seq, seq[1:]))
    with pytest.raises(ValueError):
        make_dyadic(1.0, 0)


def test_sequence_requires_decreasing_mesh():
    with pytest.raises(ValueError):
        PartitionSequence((Partition.uniform(1, 4), Partition.uniform(1, 4)))
    with pytest.raises(ValueError):
        PartitionSequence((Partition.uniform(1, 2), Partition.uniform(2, 4)))


def test_thinned_levels_are_nested_subgrids():
    grid = make_random(1.0, 99, seed=3)
    seq = thinned_levels(grid, 4)
    assert seq.finest == grid
    for p in seq:
        p.indices_in(grid)  # raises if not a subgrid
        assert p.T == grid.T


def test_dyadic_levels_snaps_to_grid():
    grid = Partition.uniform(1.0, 64)
    seq = dyadic_levels(grid, [8, 16, 64])
    assert [p.cells for p in seq] == [8, 16, 64]
    with pytest.raises(ValueError):
        dyadic_levels(grid, [3])


def test_make_random_is_seeded():
    a, b = make_random(1.0, 50, seed=1), make_random(1.0, 50, seed=1)
    assert a == b
    assert make_random(1.0, 50, seed=2) != a
    assert a.cells == 51


def test_indices_in_rejects_foreign_points():
    with pytest.raises(ValueError):
        Partition(np.array([0.0, 0.3, 1.0])).indices_in(Partition.uniform(1.0, 4))


def test_qv_of_linear_path_vanishes():
    seq = make_dyadic(1.0, 6)
    rep = quadratic_variation(lambda t: 3.0 * t, seq)
    # 9 * T^2 / N  on N cells
    assert rep.estimates == pytest.approx([9.0 / p.cells for p in seq])


def test_qv_of_brownian_path_close_to_horizon():
    grid = Partition.uniform(2.0, 2**14)
    w = simulate_brownian(grid, seed=11)
    rep = quadratic_variation(SampledPath(grid, w), thinned_levels(grid, 4))
    assert rep.limit == pytest.approx(2.0, rel=0.05)
    assert rep.converged


def test_limit_report_csv(tmp_path):
    rep = LimitReport([2, 4], [0.5, 0.25], [1.0, 1.1])
    rep.to_csv(tmp_path / "qv.csv")
    rows = list(csv.reader(open(tmp_path / "qv.csv")))
    assert rows[0] == ["level", "cells", "mesh", "qv_estimate", "cauchy_gap"]
    assert rows[1][-1] == "nan"
    assert float(rows[2][-1]) == pytest.approx(0.1)
    assert rep.relative_gap == pytest.approx(0.1 / 1.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
def test_qv_nonnegative_and_coarsening_bound(values):
    # coarsening merges increments: (a+b)^2 <= 2(a^2+b^2)
    v = np.asarray(values)
    fine = realized_qv(v)
    coarse = realized_qv(v[::2] if v.size % 2 else np.append(v[:-1:2], v[-1]))
    assert fine >= 0.0
    assert coarse <= 2.0 * fine + 1e-9 * (1 + fine)


def test_random_partition_mesh_is_small():
    # order-statistics oracle: 10^4 uniform points leave no gap above 0.01
    # except with negligible probability
    meshes = np.array([make_random(1.0, 10_000, seed=k).mesh for k in range(200)])
    assert np.mean(meshes < 0.01) > 0.99
