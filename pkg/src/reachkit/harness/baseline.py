"""delta-covering grid baseline for one-step reachability of ``x' = x + u``.

``X0 = [-1, 1]^n`` is covered by ``c^n`` cells (``c = ceil(1 / delta)``,
half-width ``1 / c``). Two set estimates are available:

* ``reach="cell"``: union of the exact per-cell reach boxes
  ``cell + [-ubar, ubar]^n``; it always equals the true set.
* ``reach="point"``: union of ``x_i + [-ubar, ubar]^n`` over the grid
  points ``x_i`` (cell centres), i.e. the estimate obtained by evaluating
  the exact reachability oracle only at grid points. Its coverage depends
  strongly on ``ubar``.

The union of a product grid of boxes is itself a product of 1-D unions, so
its volume is computed exactly as a product of interval-union lengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from reachkit.dynamics.linear import AdditiveLinear


@dataclass(frozen=True)
class GridCoverage:
    cells_per_axis: int
    evaluations: int
    volume: float
    true_volume: float
    intervals: List[tuple]

    @property
    def coverage(self) -> float:
        return self.volume / self.true_volume


def interval_union_length(intervals) -> float:
    """Total length of a union of closed intervals."""
    total = 0.0
    cur_lo = cur_hi = None
    for lo, hi in sorted(intervals):
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total


def cells_for_delta(delta: float) -> int:
    if not delta > 0:
        raise ValueError("delta must be > 0")
    return max(1, math.ceil(1.0 / delta - 1e-12))


def grid_covering_baseline(model: AdditiveLinear, delta: float, reach: str = "cell") -> GridCoverage:
    """Grid estimate of the one-step reachable set from ``X0 = [-1, 1]^n``."""
    if not isinstance(model, AdditiveLinear):
        raise TypeError("the grid baseline is exact only for AdditiveLinear models")
    if reach not in ("cell", "point"):
        raise ValueError(f"unknown reach mode {reach!r}")
    c = cells_for_delta(delta)
    half = 1.0 / c
    centers = -1.0 + (2 * np.arange(c) + 1) * half
    pad = model.ubar + (half if reach == "cell" else 0.0)
    intervals = [(x - pad, x + pad) for x in centers]
    length = interval_union_length(intervals)
    n = model.n
    return GridCoverage(c, c ** n, length ** n, (2.0 * (1.0 + model.ubar)) ** n, intervals)


def grid_for_budget(model: AdditiveLinear, budget: int, reach: str = "point") -> GridCoverage:
    """Finest grid using at most ``budget`` evaluations (at least one cell)."""
    c = max(1, int(math.floor(budget ** (1.0 / model.n) + 1e-9)))
    return grid_covering_baseline(model, 1.0 / c, reach)
