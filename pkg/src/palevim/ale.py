"""ALE main-effect curves, second-order surfaces and their importance measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, QuantilePartition, WeightedSeries, build_partition, exact_mean, weighted_variance

MAX_K = 100
OBS_PER_INTERVAL = 50
MAX_K_PAIR = 40
MAX_PATHS = 256


def default_K(n: int) -> int:
    """Intervals per predictor: about 50 observations each, at most 100."""
    return max(1, min(n // OBS_PER_INTERVAL, MAX_K))


def default_K_pair(K: int) -> int:
    return min(K, MAX_K_PAIR)


def default_L(n: int, K: int) -> int:
    return max(1, min(n // K, MAX_PATHS))


@dataclass(frozen=True)
class LocalEffects:
    """Per-observation finite differences of a model across interval endpoints.

    ``grid`` holds the K+1 interval endpoints (numeric) or the ordered levels
    (categorical).  ``effects[k]`` and ``members[k]`` are aligned arrays for
    interval k+1.  ``point_counts`` weights each grid point when curves are
    summarised: numeric grids give the left end z_0 weight 0 and z_k the count
    of interval k; categorical grids weight each level by its frequency.
    """

    j: int
    name: str
    grid: np.ndarray
    effects: tuple
    members: tuple
    point_counts: np.ndarray
    categorical: bool = False
    evaluations: int = 0
    partition: Optional[QuantilePartition] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.effects)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(e) for e in self.effects], dtype=int)

    @property
    def n(self) -> int:
        return int(self.point_counts.sum())

    def interval_means(self) -> np.ndarray:
        return np.array([exact_mean(e) for e in self.effects])


def _with_column(X: np.ndarray, j: int, values) -> np.ndarray:
    out = X.copy()
    out[:, j] = values
    return out


def local_effects(model, data: Dataset, partition: QuantilePartition, j: int) -> LocalEffects:
    """Finite differences f(z_k, x_rest) - f(z_{k-1}, x_rest) for every row (2n evaluations)."""
    col = data.column(j)
    if col.is_categorical:
        raise ValueError(f"column {col.name!r} is categorical; use categorical_local_effects")
    X = data.matrix()
    pos = partition.assign(col.values)
    z = partition.breakpoints
    upper = model.eval_batch(_with_column(X, j, z[pos + 1]))
    lower = model.eval_batch(_with_column(X, j, z[pos]))
    delta = upper - lower
    effects = tuple(delta[m] for m in partition.members)
    point_counts = np.concatenate([[0], partition.counts])
    return LocalEffects(j, col.name, z, effects, partition.members, point_counts,
                        evaluations=2 * data.n, partition=partition)


def accumulate(increments: np.ndarray) -> np.ndarray:
    """Prefix sums along axis 0 with a leading row of zeros."""
    increments = np.asarray(increments, dtype=float)
    zero = np.zeros((1,) + increments.shape[1:])
    return np.concatenate([zero, np.cumsum(increments, axis=0)])


def summary_points(acc: np.ndarray, point_counts: np.ndarray, midpoint: bool = False):
    """Values and weights of the piecewise-constant summary of accumulated curves.

    Right-endpoint mode keeps the grid points with positive weight; midpoint
    mode replaces interval k by the average of its two endpoint values.
    Returns (positions, values, weights) where positions index the grid.
    """
    point_counts = np.asarray(point_counts, dtype=float)
    if midpoint:
        values = 0.5 * (acc[:-1] + acc[1:])
        weights = point_counts[1:]
        positions = np.arange(1, len(point_counts))
    else:
        positions = np.flatnonzero(point_counts > 0)
        values = acc[positions]
        weights = point_counts[positions]
    return positions, values, weights


@dataclass(frozen=True)
class AleCurve:
    j: int
    name: str
    grid: np.ndarray
    g: np.ndarray
    f_hat: np.ndarray
    constant: float
    point_counts: np.ndarray
    midpoint: bool = False
    categorical: bool = False

    def summary(self):
        """(values, weights) of the centred curve at its summary points."""
        _, values, weights = summary_points(self.f_hat, self.point_counts, self.midpoint)
        return values, weights

    def locate(self, x) -> np.ndarray:
        """Grid position holding the right endpoint (or level) of each value."""
        if self.categorical:
            lookup = {lev: r for r, lev in enumerate(self.grid.tolist())}
            return np.array([lookup[v] for v in np.asarray(x, dtype=object).tolist()], dtype=int)
        x = np.asarray(x, dtype=float)
        K = len(self.grid) - 1
        return np.clip(np.searchsorted(self.grid[1:], x, side="left"), 0, K - 1) + 1

    def evaluate(self, x) -> np.ndarray:
        pos = self.locate(x)
        if self.midpoint and not self.categorical:
            return 0.5 * (self.f_hat[pos - 1] + self.f_hat[pos])
        return self.f_hat[pos]


def ale_main_curve(e: LocalEffects, midpoint: bool = False) -> AleCurve:
    """Accumulate interval-mean effects and centre to weighted mean zero."""
    if midpoint and e.categorical:
        raise ValueError("midpoint convention applies to numeric predictors only")
    g = accumulate(e.interval_means())
    _, values, weights = summary_points(g, e.point_counts, midpoint)
    constant = float(np.dot(weights, values) / weights.sum())
    return AleCurve(e.j, e.name, e.grid, g, g - constant, constant, e.point_counts,
                    midpoint, e.categorical)


def ale_main_vim(c: AleCurve) -> float:
    """Weighted mean square of the centred curve."""
    values, weights = c.summary()
    return float(np.dot(weights, values * values) / weights.sum())


# ---------------------------------------------------------------------------
# second order

@dataclass(frozen=True)
class AleSurface:
    """Pure second-order ALE interaction of a predictor pair on a K1 x K2 grid.

    ``values[k, m]`` is the surface at grid point (z_k, w_m); the first row and
    column belong to the left ends z_0 / w_0 and carry no observations.
    """

    pair: tuple
    names: tuple
    grid_a: np.ndarray
    grid_b: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    evaluations: int = 0

    def cells(self, xa, xb):
        ka = np.clip(np.searchsorted(self.grid_a[1:], np.asarray(xa, dtype=float), side="left"),
                     0, len(self.grid_a) - 2)
        kb = np.clip(np.searchsorted(self.grid_b[1:], np.asarray(xb, dtype=float), side="left"),
                     0, len(self.grid_b) - 2)
        return ka + 1, kb + 1

    def evaluate(self, xa, xb) -> np.ndarray:
        ka, kb = self.cells(xa, xb)
        return self.values[ka, kb]

    def cell_values(self) -> np.ndarray:
        return self.values[1:, 1:]

    def main_effect(self, axis: int) -> np.ndarray:
        """Accumulated ALE main effect of the surface along one axis (zero for a pure surface)."""
        return _axis_main_effect(self.values, self.counts, axis)


def _axis_main_effect(h: np.ndarray, counts: np.ndarray, axis: int) -> np.ndarray:
    if axis == 1:
        return _axis_main_effect(h.T, counts.T, 0)
    diffs = h[1:, 1:] - h[:-1, 1:]
    row_counts = counts.sum(axis=1)
    means = (counts * diffs).sum(axis=1) / row_counts
    return accumulate(means)


def _fill_empty(means: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Copy each empty cell from its nearest nonempty cell (index distance, lower indices first)."""
    filled = means.copy()
    full = np.argwhere(counts > 0)
    for k, m in np.argwhere(counts == 0):
        dist = (full[:, 0] - k) ** 2 + (full[:, 1] - m) ** 2
        best = full[np.flatnonzero(dist == dist.min())]
        # argwhere is row-major, so the first tie has the lowest (k, m)
        filled[k, m] = means[best[0, 0], best[0, 1]]
    return filled


def ale_second_surface(model, data: Dataset, j: int, l: int, K_pair: Optional[int] = None) -> AleSurface:
    """Second-order ALE interaction surface for predictors j and l (4n evaluations)."""
    if j == l:
        raise ValueError("second-order surface needs two distinct predictors")
    ca, cb = data.column(j), data.column(l)
    if ca.is_categorical or cb.is_categorical:
        raise ValueError("second-order surfaces need numeric columns")
    if K_pair is None:
        K_pair = default_K_pair(default_K(data.n))
    pa, pb = build_partition(ca.values, K_pair), build_partition(cb.values, K_pair)
    ka, kb = pa.assign(ca.values), pb.assign(cb.values)
    za, zb = pa.breakpoints, pb.breakpoints
    X = data.matrix()

    def corner(a, b):
        rows = X.copy()
        rows[:, j] = a
        rows[:, l] = b
        return model.eval_batch(rows)

    f11 = corner(za[ka + 1], zb[kb + 1])
    f01 = corner(za[ka], zb[kb + 1])
    f10 = corner(za[ka + 1], zb[kb])
    f00 = corner(za[ka], zb[kb])
    # grouped so that additive models cancel exactly
    delta = (f11 - f01) - (f10 - f00)

    Ka, Kb = pa.K, pb.K
    counts = np.zeros((Ka, Kb), dtype=int)
    np.add.at(counts, (ka, kb), 1)
    sums = np.zeros((Ka, Kb))
    np.add.at(sums, (ka, kb), delta)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    means = _fill_empty(means, counts)

    h = np.zeros((Ka + 1, Kb + 1))
    h[1:, 1:] = np.cumsum(np.cumsum(means, axis=0), axis=1)
    h = h - _axis_main_effect(h, counts, 0)[:, None] - _axis_main_effect(h, counts, 1)[None, :]
    h = h - float((counts * h[1:, 1:]).sum() / counts.sum())
    return AleSurface((j, l), (ca.name, cb.name), za, zb, h, counts, evaluations=4 * data.n)


def _surface_for(surfaces: dict, j: int, l: int):
    if (j, l) in surfaces:
        return surfaces[(j, l)], False
    if (l, j) in surfaces:
        return surfaces[(l, j)], True
    raise KeyError(f"missing second-order surface for pair ({j}, {l})")


def _surface_at(data: Dataset, s: AleSurface) -> np.ndarray:
    a, b = s.pair
    return s.evaluate(data.column(a).values, data.column(b).values)


def second_order_values(j: int, curves: Sequence[AleCurve], surfaces: dict, data: Dataset) -> np.ndarray:
    """Main effect of j plus every pair surface containing j, evaluated at each row."""
    out = curves[j].evaluate(data.column(j).values).astype(float)
    for l in range(data.d):
        if l != j:
            s, _ = _surface_for(surfaces, j, l)
            out = out + _surface_at(data, s)
    return out


def ale_second_vim(j: int, curves: Sequence[AleCurve], surfaces: dict, data: Dataset) -> float:
    values = second_order_values(j, curves, surfaces, data)
    return weighted_variance(WeightedSeries(values, np.ones(data.n)))


def ale2_approximation(mean: float, curves: Sequence[AleCurve], surfaces: dict, data: Dataset) -> np.ndarray:
    approx = np.full(data.n, float(mean))
    for j, c in enumerate(curves):
        approx += c.evaluate(data.column(j).values)
    for j in range(data.d):
        for l in range(j + 1, data.d):
            s, _ = _surface_for(surfaces, j, l)
            approx += _surface_at(data, s)
    return approx


def r2_ale2(model, data: Dataset, curves: Sequence[AleCurve], surfaces: dict,
            predictions: Optional[np.ndarray] = None) -> float:
    """Share of prediction variance captured by main effects plus pair interactions."""
    f = model.eval_batch(data.matrix()) if predictions is None else np.asarray(predictions, dtype=float)
    var_f = float(np.var(f))
    if var_f <= 1e-300 or np.ptp(f) == 0:
        raise ValueError("constant model: prediction variance is zero")
    resid = f - ale2_approximation(float(np.mean(f)), curves, surfaces, data)
    return 1.0 - float(np.var(resid)) / var_f
