"""Time partitions of a trading horizon and pathwise quadratic variation.

A :class:`Partition` is an ordered grid ``0 = t_0 < t_1 < ... < t_N = T``.
Refining sequences of partitions are used to approximate pathwise limits
(quadratic variation, Stieltjes sums against ``d[Z, Z]``, Ito sums).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

DEFAULT_CAUCHY_TOL = 1e-2


@dataclass(frozen=True)
class Partition:
    """Strictly increasing time grid starting at 0."""

    times: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a partition needs at least two points")
        if t[0] != 0.0:
            raise ValueError(f"partition must start at 0, got {t[0]!r}")
        if not np.all(np.isfinite(t)):
            raise ValueError("partition times must be finite")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("partition times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, cells: int) -> "Partition":
        if T <= 0:
            raise ValueError("horizon T must be positive")
        if cells < 1:
            raise ValueError("need at least one cell")
        return cls(np.linspace(0.0, T, cells + 1))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def cells(self) -> int:
        return self.times.size - 1

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.times.shape == other.times.shape and bool(
            np.all(self.times == other.times)
        )

    def __hash__(self) -> int:
        return hash(self.times.tobytes())

    def indices_in(self, grid: "Partition") -> np.ndarray:
        """Positions of this partition's points inside ``grid``.

        Raises ``ValueError`` unless every point is (exactly) a grid point.
        """
        idx = np.searchsorted(grid.times, self.times)
        ok = (idx < grid.times.size) & (
            grid.times[np.minimum(idx, grid.times.size - 1)] == self.times
        )
        if not np.all(ok):
            bad = self.times[~ok][0]
            raise ValueError(f"time {bad!r} is not a point of the sampling grid")
        return idx

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"])
            for t in self.times:
                w.writerow([repr(float(t))])


@dataclass(frozen=True)
class PartitionSequence:
    """Partitions with strictly decreasing mesh (coarsest first)."""

    partitions: tuple

    def __post_init__(self) -> None:
        parts = tuple(self.partitions)
        if not parts:
            raise ValueError("empty partition sequence")
        T = parts[0].T
        for prev, nxt in zip(parts, parts[1:]):
            if not nxt.mesh < prev.mesh:
                raise ValueError("meshes must be strictly decreasing")
        if any(p.T != T for p in parts):
            raise ValueError("all partitions must share the horizon")
        object.__setattr__(self, "partitions", parts)

    def __len__(self) -> int:
        return len(self.partitions)

    def __iter__(self):
        return iter(self.partitions)

    def __getitem__(self, k: int) -> Partition:
        return self.partitions[k]

    @property
    def finest(self) -> Partition:
        return self.partitions[-1]

    @property
    def T(self) -> float:
        return self.partitions[0].T


def make_dyadic(T: float, levels: int) -> PartitionSequence:
    """Uniform partitions with ``2, 4, ..., 2**levels`` cells."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    return PartitionSequence(
        tuple(Partition.uniform(T, 2**k) for k in range(1, levels + 1))
    )


def dyadic_levels(grid: Partition, cells: Sequence[int]) -> PartitionSequence:
    """Uniform sub-partitions of ``grid`` with the requested cell counts.

    Each count must divide ``grid.cells`` and ``grid`` must itself be uniform
    (or contain the uniform points exactly).
    """
    parts = []
    for c in sorted(cells):
        p = Partition.uniform(grid.T, c)
        # snap to the grid's own float values so index lookups are exact
        idx = np.searchsorted(grid.times, p.times)
        idx = np.clip(idx, 0, grid.times.size - 1)
        close = np.isclose(grid.times[idx], p.times, rtol=0, atol=1e-12 * grid.T)
        if not np.all(close):
            raise ValueError(f"{c} cells is not a sub-partition of the grid")
        parts.append(Partition(grid.times[idx]))
    return PartitionSequence(tuple(parts))


def thinned_levels(grid: Partition, levels: int) -> PartitionSequence:
    """``grid`` and its sub-grids keeping every 2nd, 4th, ... point.

    Returns ``levels`` partitions, coarsest first, the last being ``grid``
    itself.  The endpoint ``T`` is always kept.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n = grid.cells
    parts = []
    for j in range(levels - 1, -1, -1):
        step = 2**j
        if step > n:
            raise ValueError(f"grid with {n} cells cannot be thinned {levels} times")
        idx = np.arange(0, n + 1, step)
        if idx[-1] != n:
            idx = np.append(idx, n)
        parts.append(Partition(grid.times[idx]))
    return PartitionSequence(tuple(parts))


def make_random(T: float, mean_cells: int, seed: int) -> Partition:
    """Partition with ``mean_cells`` sorted uniform interior points.

    ``{0, T}`` plus i.i.d. uniform draws on ``(0, T)``; gives ``mean_cells + 1``
    cells, so a single draw yields ``{0, u, T}``.
    """
    if mean_cells < 1:
        raise ValueError("mean_cells must be >= 1")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = np.sort(rng.uniform(0.0, T, size=mean_cells))
    u = u[(u > 0.0) & (u < T)]
    return Partition(np.unique(np.concatenate(([0.0], u, [T]))))


PathLike = Union[Callable[[np.ndarray], np.ndarray], "SampledPath"]


@dataclass(frozen=True)
class SampledPath:
    """A path known on a grid; can be read off on any sub-partition."""

    grid: Partition
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1] != len(self.grid):
            raise ValueError("values must have one entry per grid point")
        object.__setattr__(self, "values", v)

    def __call__(self, times: np.ndarray) -> np.ndarray:
        idx = Partition(np.asarray(times)).indices_in(self.grid)
        return self.values[..., idx]


def sample(path: PathLike, partition: Partition) -> np.ndarray:
    return np.asarray(path(partition.times), dtype=float)


def realized_qv(values: np.ndarray) -> np.ndarray:
    """Sum of squared increments along the last axis."""
    d = np.diff(np.asarray(values, dtype=float), axis=-1)
    return np.sum(d * d, axis=-1)


@dataclass
class LimitReport:
    """Per-level estimates of a pathwise limit plus a Cauchy diagnostic."""

    cells: list
    mesh: list
    estimates: list
    tol: float = DEFAULT_CAUCHY_TOL
    label: str = "qv_estimate"
    extra: dict = field(default_factory=dict)

    @property
    def limit(self) -> float:
        return self.estimates[-1]

    @property
    def cauchy_gaps(self) -> list:
        gaps = [float("nan")]
        for a, b in zip(self.estimates, self.estimates[1:]):
            gaps.append(abs(b - a))
        return gaps

    @property
    def cauchy_gap(self) -> float:
        return self.cauchy_gaps[-1]

    @property
    def relative_gap(self) -> float:
        scale = max(abs(self.estimates[-1]), abs(self.estimates[-2]))
        if scale == 0.0:
            return 0.0
        return self.cauchy_gap / scale

    @property
    def converged(self) -> bool:
        return self.relative_gap <= self.tol

    def rows(self):
        for k, (c, m, e, g) in enumerate(
            zip(self.cells, self.mesh, self.estimates, self.cauchy_gaps)
        ):
            yield k, c, m, e, g

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "cells", "mesh", self.label, "cauchy_gap"])
            for k, c, m, e, g in self.rows():
                w.writerow([k, c, repr(m), repr(e), repr(g)])


def level_report(
    seq: PartitionSequence,
    estimator: Callable[[Partition], float],
    tol: float = DEFAULT_CAUCHY_TOL,
    label: str = "qv_estimate",
) -> LimitReport:
    if len(seq) < 2:
        raise ValueError("need at least two partition levels for a limit")
    est = [float(estimator(p)) for p in seq]
    return LimitReport(
        cells=[p.cells for p in seq],
        mesh=[p.mesh for p in seq],
        estimates=est,
        tol=tol,
        label=label,
    )


def quadratic_variation(
    path: PathLike, seq: PartitionSequence, tol: float = DEFAULT_CAUCHY_TOL
) -> LimitReport:
    """Realized quadratic variation of ``path`` on each level of ``seq``."""
    return level_report(seq, lambda p: realized_qv(sample(path, p)), tol)
