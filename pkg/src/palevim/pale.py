"""Path-ALE total-effect importances.

Paths are K x L matrices of per-interval increments.  Quantile paths sort the
local effects inside each interval; connected paths group observations that
are close in the remaining predictors by simultaneous median splits.  Both are
summarised by the same variance engine, which centres every path at the
interval that minimises its spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import ks_2samp

from .ale import (LocalEffects, accumulate, ale_main_curve, ale_main_vim, default_K, default_L,
                  local_effects, summary_points, MAX_PATHS)
from .core import Dataset, build_partition, exact_mean

QUANTILE = "quantile"
CONNECTED = "connected"
CUSTOM = "custom"


@dataclass(frozen=True)
class PathSet:
    j: int
    increments: np.ndarray
    point_counts: np.ndarray
    kind: str = CUSTOM
    grid: Optional[np.ndarray] = None
    provenance: tuple = field(default=(), repr=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] < 1 or inc.shape[1] < 1:
            raise ValueError("increments must be a nonempty K x L matrix")
        if not np.all(np.isfinite(inc)):
            raise ValueError("increments must be finite")
        counts = np.asarray(self.point_counts, dtype=float)
        if counts.shape != (inc.shape[0] + 1,):
            raise ValueError("point_counts must have K+1 entries")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("point_counts must be nonnegative with a positive total")
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "point_counts", counts)

    @classmethod
    def from_interval_counts(cls, increments, counts, kind: str = CUSTOM, j: int = 0) -> "PathSet":
        """Numeric-style path set: grid point z_k weighted by the count of interval k."""
        return cls(j, increments, np.concatenate([[0], np.asarray(counts, dtype=float)]), kind)

    @property
    def K(self) -> int:
        return self.increments.shape[0]

    @property
    def L(self) -> int:
        return self.increments.shape[1]


@dataclass(frozen=True)
class PaleResult:
    vim: float
    k_star: int
    paths: np.ndarray
    mean_path: np.ndarray
    kind: str = CUSTOM
    objective: np.ndarray = field(default=None, repr=False)


def centering_objective(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Spread criterion for centring all paths at each candidate point.

    ``values`` is P x L (path value at each summary point), ``weights`` the
    P point weights.  Entry p is sum_l [(col_mean_l - grand) - (G_pl - row_mean_p)]^2.
    """
    w = weights / weights.sum()
    row_mean = values.mean(axis=1)
    col_mean = w @ values
    grand = float(w @ row_mean)
    dev = (col_mean - grand)[None, :] - (values - row_mean[:, None])
    return (dev * dev).sum(axis=1)


def path_variance(values: np.ndarray, weights: np.ndarray):
    """Variance of path functions centred at their best common point.

    Returns (vim, index of the centring point, objective vector).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    w = weights / weights.sum()
    objective = centering_objective(values, weights)
    p_star = int(np.argmin(objective))
    centred = values - values[p_star][None, :]
    # weighted grand mean of the centred paths
    mean = float(w @ centred.mean(axis=1))
    dev = centred - mean
    vim = float((w[:, None] * dev * dev).sum() / values.shape[1])
    return vim, p_star, objective


def spale_vim(p: PathSet, midpoint: bool = False) -> PaleResult:
    acc = accumulate(p.increments)
    positions, values, weights = summary_points(acc, p.point_counts, midpoint)
    vim, p_star, objective = path_variance(values, weights)
    k_star = int(positions[p_star])
    if midpoint:
        ref = 0.5 * (acc[k_star - 1] + acc[k_star])
    else:
        ref = acc[k_star]
    return PaleResult(vim, k_star, acc - ref[None, :], acc.mean(axis=1), p.kind, objective)


# ---------------------------------------------------------------------------
# quantile paths

def quantile_ranks(count: int, L: int) -> np.ndarray:
    """0-based nearest-rank positions of the (l - 1/2)/L quantiles, l = 1..L."""
    l = np.arange(1, L + 1)
    return -(-(2 * l - 1) * count // (2 * L)) - 1


def quantile_paths(e: LocalEffects, L: int) -> PathSet:
    if isinstance(L, bool) or not isinstance(L, (int, np.integer)) or L < 1:
        raise ValueError(f"L must be a positive integer, got {L!r}")
    inc = np.empty((e.K, L))
    prov = []
    for k, (eff, mem) in enumerate(zip(e.effects, e.members)):
        if len(eff) == 0:
            raise ValueError(f"interval {k + 1} is empty")
        order = np.argsort(eff, kind="stable")
        pick = order[quantile_ranks(len(eff), L)]
        inc[k] = eff[pick]
        prov.append(tuple(np.asarray([mem[i]]) for i in pick))
    return PathSet(e.j, inc, e.point_counts, QUANTILE, e.grid, tuple(prov))


# ---------------------------------------------------------------------------
# connected paths

def _split_keys(data: Dataset, m: int, rows: np.ndarray, effects: np.ndarray) -> np.ndarray:
    """Sortable keys of feature m for one region.

    Numeric features use their values; categorical features use the rank of
    each level after sorting the levels present by their mean local effect.
    """
    col = data.column(m)
    if not col.is_categorical:
        return col.values[rows]
    labels = col.values[rows]
    present = sorted(set(labels.tolist()))
    means = {lev: exact_mean(effects[labels == lev]) for lev in present}
    ranked = sorted(present, key=lambda lev: (means[lev], lev))
    rank = {lev: r for r, lev in enumerate(ranked)}
    return np.array([rank[v] for v in labels.tolist()], dtype=float)


def _median_split(keys: np.ndarray):
    """Boolean mask of the left child (key < upper-middle order statistic)."""
    median = np.sort(keys)[len(keys) // 2]
    return keys < median


class _Region:
    __slots__ = ("pos", "rows", "effects")

    def __init__(self, pos, rows, effects):
        self.pos = pos
        self.rows = rows
        self.effects = effects


def _split_leaf(leaf, data: Dataset, candidates):
    """Split every region of a leaf on the best feature, or return None if no feature splits."""
    best, best_score, best_masks = None, -1.0, None
    for m in candidates:
        score, masks, proper = 0.0, [], False
        for reg in leaf:
            if len(reg.rows) < 2:
                masks.append(None)
                continue
            left = _median_split(_split_keys(data, m, reg.rows, reg.effects))
            if left.all() or not left.any():
                masks.append(None)
                continue
            proper = True
            masks.append(left)
            score += abs(exact_mean(reg.effects[left]) - exact_mean(reg.effects[~left]))
        if proper and score > best_score:
            best, best_score, best_masks = m, score, masks
    if best is None:
        return None
    lefts, rights = [], []
    for reg, left in zip(leaf, best_masks):
        if left is None:
            # depleted or tied region: both children reuse it
            lefts.append(reg)
            rights.append(reg)
        else:
            lefts.append(_Region(reg.pos[left], reg.rows[left], reg.effects[left]))
            rights.append(_Region(reg.pos[~left], reg.rows[~left], reg.effects[~left]))
    return lefts, rights


def connected_leaves(e: LocalEffects, data: Dataset, L_target: int):
    """Breadth-first simultaneous median splitting of the interval regions."""
    if isinstance(L_target, bool) or not isinstance(L_target, (int, np.integer)) or L_target < 1:
        raise ValueError(f"L must be a positive integer, got {L_target!r}")
    root = [_Region(np.arange(len(eff)), np.asarray(mem), np.asarray(eff, dtype=float))
            for eff, mem in zip(e.effects, e.members)]
    candidates = [m for m in range(data.d) if m != e.j]
    leaves = [root]
    while len(leaves) < L_target:
        nxt, count, progressed = [], len(leaves), False
        for leaf in leaves:
            children = _split_leaf(leaf, data, candidates) if count < L_target else None
            if children is None:
                nxt.append(leaf)
            else:
                nxt.extend(children)
                count += 1
                progressed = True
        leaves = nxt
        if not progressed:
            break
    return leaves


def connected_paths(e: LocalEffects, data: Dataset, L_target: int) -> PathSet:
    leaves = connected_leaves(e, data, L_target)
    inc = np.empty((e.K, len(leaves)))
    prov = [[None] * len(leaves) for _ in range(e.K)]
    for l, leaf in enumerate(leaves):
        for k, reg in enumerate(leaf):
            inc[k, l] = exact_mean(reg.effects)
            prov[k][l] = reg.rows
    return PathSet(e.j, inc, e.point_counts, CONNECTED, e.grid, tuple(tuple(r) for r in prov))


# ---------------------------------------------------------------------------
# categorical predictors

@dataclass(frozen=True)
class LevelOrder:
    j: int
    levels: tuple
    dissimilarity: np.ndarray = field(repr=False)
    original: tuple = ()


def mds_first_coordinate(dissimilarity) -> np.ndarray:
    """First principal coordinate of classical scaling; zeros when degenerate."""
    D = np.asarray(dissimilarity, dtype=float)
    q = D.shape[0]
    J = np.eye(q) - np.full((q, q), 1.0 / q)
    B = -0.5 * J @ (D * D) @ J
    evals, evecs = np.linalg.eigh(B)
    top = evals[-1]
    if not top > 1e-12 * max(1.0, float(np.abs(D).max())):
        return np.zeros(q)
    coord = evecs[:, -1] * math.sqrt(top)
    tol = 1e-12 * max(1.0, float(np.abs(coord).max()))
    nonzero = np.flatnonzero(np.abs(coord) > tol)
    if nonzero.size and coord[nonzero[0]] > 0:
        coord = -coord
    coord[np.abs(coord) <= tol] = 0.0
    return coord


def mds_order(dissimilarity) -> np.ndarray:
    """Level indices sorted along the first coordinate (original order breaks ties)."""
    return np.argsort(mds_first_coordinate(dissimilarity), kind="stable")


def level_dissimilarity(data: Dataset, j: int) -> np.ndarray:
    col = data.column(j)
    levels = col.levels
    masks = [col.values == lev for lev in levels]
    if any(not mk.any() for mk in masks):
        raise ValueError(f"column {col.name!r} has a level with zero observations")
    q = len(levels)
    D = np.zeros((q, q))
    for m in range(data.d):
        if m == j:
            continue
        other = data.column(m)
        for a in range(q):
            for b in range(a + 1, q):
                xa, xb = other.values[masks[a]], other.values[masks[b]]
                if other.is_categorical:
                    pa = np.array([np.mean(xa == v) for v in other.levels])
                    pb = np.array([np.mean(xb == v) for v in other.levels])
                    dist = 0.5 * float(np.abs(pa - pb).sum())
                else:
                    dist = float(ks_2samp(xa, xb).statistic)
                D[a, b] += dist
                D[b, a] += dist
    return D


def reorder_categorical_levels(data: Dataset, j: int) -> LevelOrder:
    col = data.column(j)
    if not col.is_categorical:
        raise ValueError(f"column {col.name!r} is not categorical")
    D = level_dissimilarity(data, j)
    order = mds_order(D)
    return LevelOrder(j, tuple(col.levels[i] for i in order), D, col.levels)


def categorical_local_effects(model, data: Dataset, j: int, order: LevelOrder) -> LocalEffects:
    """Effects of stepping between neighbouring levels; interior levels feed two intervals."""
    col = data.column(j)
    if set(order.levels) != set(col.levels):
        raise ValueError("level order does not match the column's levels")
    known = model.levels.get(j) if hasattr(model, "levels") else None
    if known and not set(order.levels) <= set(known):
        raise ValueError(f"level unseen by the model schema in column {col.name!r}")
    X = data.matrix()
    lev = list(order.levels)
    members, upper_rows, lower_rows = [], [], []
    for k in range(1, len(lev)):
        idx = np.flatnonzero((col.values == lev[k - 1]) | (col.values == lev[k]))
        members.append(idx)
        upper_rows.append(_rows_at(X[idx], j, lev[k]))
        lower_rows.append(_rows_at(X[idx], j, lev[k - 1]))
    upper = model.eval_batch(np.concatenate(upper_rows))
    lower = model.eval_batch(np.concatenate(lower_rows))
    delta = upper - lower
    bounds = np.cumsum([0] + [len(m) for m in members])
    effects = tuple(delta[bounds[k]:bounds[k + 1]] for k in range(len(members)))
    point_counts = np.array([int(np.sum(col.values == v)) for v in lev])
    grid = np.array(lev, dtype=object)
    return LocalEffects(j, col.name, grid, effects, tuple(members), point_counts,
                        categorical=True, evaluations=2 * int(bounds[-1]))


def _rows_at(rows: np.ndarray, j: int, level) -> np.ndarray:
    out = rows.copy()
    out[:, j] = level
    return out


def default_categorical_L(e: LocalEffects) -> int:
    return min(int(math.ceil(e.counts.mean())), MAX_PATHS)


# ---------------------------------------------------------------------------
# composition

def predictor_local_effects(model, data: Dataset, j: int, K: Optional[int] = None) -> LocalEffects:
    """Local effects for any predictor kind, with default K for numeric columns."""
    col = data.column(j)
    if col.is_categorical:
        return categorical_local_effects(model, data, j, reorder_categorical_levels(data, j))
    if K is None:
        K = default_K(data.n)
    return local_effects(model, data, build_partition(col.values, min(K, data.n)), j)


def resolve_L(e: LocalEffects, L: Optional[int]) -> int:
    if L is not None:
        return L
    if e.categorical:
        return default_categorical_L(e)
    return default_L(e.n, e.K)


def qpale_vim(model, data: Dataset, p, j: int, L: Optional[int] = None, midpoint: bool = False) -> PaleResult:
    e = local_effects(model, data, p, j) if p is not None else predictor_local_effects(model, data, j)
    return spale_vim(quantile_paths(e, resolve_L(e, L)), midpoint)


def cpale_vim(model, data: Dataset, p, j: int, L: Optional[int] = None, midpoint: bool = False) -> PaleResult:
    e = local_effects(model, data, p, j) if p is not None else predictor_local_effects(model, data, j)
    return spale_vim(connected_paths(e, data, resolve_L(e, L)), midpoint)


@dataclass
class PredictorAnalysis:
    """ALE main curve and path results sharing one set of local effects."""

    effects: LocalEffects
    L: int
    curve: object
    ale_main: float
    qpale: Optional[PaleResult] = None
    cpale: Optional[PaleResult] = None


def analyze_predictor(model, data: Dataset, j: int, K: Optional[int] = None, L: Optional[int] = None,
                      midpoint: bool = False, quantile: bool = True, connected: bool = True) -> PredictorAnalysis:
    e = predictor_local_effects(model, data, j, K)
    L = resolve_L(e, L)
    use_mid = midpoint and not e.categorical
    curve = ale_main_curve(e, use_mid)
    out = PredictorAnalysis(e, L, curve, ale_main_vim(curve))
    if quantile:
        out.qpale = spale_vim(quantile_paths(e, L), use_mid)
    if connected:
        out.cpale = spale_vim(connected_paths(e, data, L), use_mid)
    return out
