"""Shared data structures: tabular datasets, quantile partitions and weighted statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DegenerateColumnError(ValueError):
    pass


class PartitionRangeError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    values: np.ndarray
    kind: str = NUMERIC
    levels: tuple = ()

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


def numeric_column(name: str, values) -> Column:
    arr = np.asarray(values, dtype=float)
    arr.setflags(write=False)
    return Column(name, arr, NUMERIC)


def categorical_column(name: str, values) -> Column:
    """Build a categorical column; levels are the sorted distinct labels."""
    arr = np.asarray([str(v) for v in values], dtype=object)
    arr.setflags(write=False)
    levels = tuple(sorted(set(arr.tolist())))
    return Column(name, arr, CATEGORICAL, levels)


@dataclass(frozen=True)
class Dataset:
    """Predictor columns plus an optional real response.

    Columns are stored individually so numeric and categorical predictors can
    coexist; :meth:`matrix` assembles the row matrix handed to models.
    """

    columns: tuple
    response: Optional[np.ndarray] = None
    response_name: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise ValueError("dataset needs at least one predictor column")
        names = [c.name for c in self.columns]
        if any(not name for name in names):
            raise ValueError("column names must be nonempty")
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        n = len(self.columns[0].values)
        if n < 2:
            raise ValueError("dataset needs at least 2 observations")
        for c in self.columns:
            if len(c.values) != n:
                raise ValueError(f"column {c.name!r} has {len(c.values)} entries, expected {n}")
            if c.is_categorical and len(c.levels) < 2:
                raise ValueError(f"categorical column {c.name!r} needs at least 2 levels")
        if self.response is not None:
            resp = np.asarray(self.response, dtype=float)
            if resp.shape != (n,):
                raise ValueError("response length does not match predictors")
            resp.setflags(write=False)
            object.__setattr__(self, "response", resp)

    @classmethod
    def from_array(cls, X, names: Optional[Sequence[str]] = None, response=None) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("expected a 2-D array")
        if names is None:
            names = [f"x{j + 1}" for j in range(X.shape[1])]
        cols = [numeric_column(name, X[:, j]) for j, name in enumerate(names)]
        return cls(tuple(cols), response)

    @property
    def n(self) -> int:
        return len(self.columns[0].values)

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    @property
    def kinds(self) -> list:
        return [c.kind for c in self.columns]

    def column(self, j: int) -> Column:
        return self.columns[j]

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def matrix(self) -> np.ndarray:
        """Row matrix: float dtype when all columns are numeric, object otherwise."""
        if all(not c.is_categorical for c in self.columns):
            return np.column_stack([c.values for c in self.columns]).astype(float)
        out = np.empty((self.n, self.d), dtype=object)
        for j, c in enumerate(self.columns):
            out[:, j] = c.values
        return out

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        cols = []
        for c in self.columns:
            if c.is_categorical:
                cols.append(categorical_column(c.name, c.values[rows]))
            else:
                cols.append(numeric_column(c.name, c.values[rows]))
        resp = None if self.response is None else self.response[rows]
        return Dataset(tuple(cols), resp, self.response_name)


@dataclass(frozen=True)
class QuantilePartition:
    """Intervals (z_{k-1}, z_k] over the sample range of one column.

    ``members[k]`` holds the observation indices of interval k+1 (0-based
    storage, 1-based in the public :meth:`interval_index`).
    """

    breakpoints: np.ndarray
    members: tuple = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=int)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def interval_index(self, x: float) -> int:
        z = self.breakpoints
        if not (z[0] < x <= z[-1]):
            raise PartitionRangeError(f"{x!r} is out of partition range ({z[0]!r}, {z[-1]!r}]")
        return int(np.searchsorted(z[1:], x, side="left")) + 1

    def assign(self, values) -> np.ndarray:
        """0-based interval position of every value (vectorised interval_index - 1)."""
        values = np.asarray(values, dtype=float)
        z = self.breakpoints
        if values.size and (values.min() <= z[0] or values.max() > z[-1]):
            raise PartitionRangeError("values out of partition range")
        return np.searchsorted(z[1:], values, side="left")


def lower_offset(min_value: float) -> float:
    return max(1e-9, 1e-9 * abs(min_value))


def build_partition(values, K: int) -> QuantilePartition:
    """Nearest-rank quantile partition of ``values`` into at most ``K`` intervals.

    Breakpoint k is the order statistic of rank ceil(k*n/K); repeated
    breakpoints are merged, so ties can reduce the number of intervals.
    """
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError("need at least 2 values")
    if K > n:
        raise ValueError(f"K={K} exceeds the number of values n={n}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    ordered = np.sort(values)
    if ordered[0] == ordered[-1]:
        raise DegenerateColumnError("degenerate column: all values identical")
    ranks = [-(-k * n // K) for k in range(1, K + 1)]
    upper = np.unique(ordered[np.array(ranks) - 1])
    z0 = ordered[0] - lower_offset(ordered[0])
    breakpoints = np.concatenate([[z0], upper])
    breakpoints.setflags(write=False)
    pos = np.searchsorted(upper, values, side="left")
    order = np.argsort(pos, kind="stable")
    bounds = np.searchsorted(pos[order], np.arange(len(upper) + 1))
    members = tuple(order[bounds[k]:bounds[k + 1]] for k in range(len(upper)))
    return QuantilePartition(breakpoints, members)


@dataclass(frozen=True)
class WeightedSeries:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape:
            raise ValueError("values and weights must have the same length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not w.sum() > 0:
            raise ValueError("weights must sum to a positive total")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.values) / self.weights.sum())


def weighted_variance(s: WeightedSeries) -> float:
    """Population-style weighted variance sum(w (v - m)^2) / sum(w)."""
    dev = s.values - s.mean
    return float(np.dot(s.weights, dev * dev) / s.weights.sum())


def exact_mean(values) -> float:
    """Correctly rounded mean, independent of the order of ``values``."""
    values = np.asarray(values, dtype=float)
    return math.fsum(values.tolist()) / values.size
