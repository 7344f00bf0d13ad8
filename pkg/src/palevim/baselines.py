"""Marginal permutation and sampling Shapley importances, plus closed-form targets
for the three-predictor linear Gaussian model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset

MAX_BATCH_ROWS = 1_000_000


@dataclass(frozen=True)
class BaselineConfig:
    N: int = 50
    M: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be at least 1")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (predictor, replicate) unit of work."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def permutation_loss_increase(model, data: Dataset, j: int, perm, base_pred: np.ndarray) -> float:
    """Mean increase in squared error when column j is reordered by ``perm``."""
    y = data.response
    X = data.matrix()
    X[:, j] = X[np.asarray(perm), j]
    pred = model.eval_batch(X)
    return float(np.mean((y - pred) ** 2 - (y - base_pred) ** 2))


def marginal_permutation_vim(model, data: Dataset, j: int, cfg: BaselineConfig = BaselineConfig(),
                             base_pred: Optional[np.ndarray] = None) -> float:
    if data.response is None:
        raise ValueError("permutation VIM requires a response column")
    if base_pred is None:
        base_pred = model.eval_batch(data.matrix())
    total = 0.0
    for r in range(cfg.N):
        perm = stream(cfg.seed, j, r).permutation(data.n)
        total += permutation_loss_increase(model, data, j, perm, base_pred)
    return total / cfg.N


def local_shapley(model, data: Dataset, j: int, cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    """Sampled marginal Shapley value of predictor j at every row (2Mn evaluations)."""
    n, d = data.n, data.d
    X = data.matrix()
    rng = stream(cfg.seed, j)
    phi = np.zeros(n)
    per_chunk = max(1, MAX_BATCH_ROWS // n)
    done = 0
    while done < cfg.M:
        reps = min(per_chunk, cfg.M - done)
        rows = np.tile(np.arange(n), reps)
        # position of each feature in a uniformly random ordering
        rank = np.argsort(np.argsort(rng.random((rows.size, d)), axis=1), axis=1)
        donor = rng.integers(0, n, size=rows.size)
        after = rank > rank[:, [j]]
        b1 = np.where(after, X[donor], X[rows])
        b2 = b1.copy()
        b2[:, j] = X[donor, j]
        diff = model.eval_batch(b1) - model.eval_batch(b2)
        phi += diff.reshape(reps, n).sum(axis=0)
        done += reps
    return phi / cfg.M


def marginal_shapley_vims(model, data: Dataset, cfg: BaselineConfig = BaselineConfig(),
                          predictors: Optional[Sequence[int]] = None) -> np.ndarray:
    """Mean squared sampled Shapley value per predictor."""
    predictors = range(data.d) if predictors is None else predictors
    return np.array([float(np.mean(local_shapley(model, data, j, cfg) ** 2)) for j in predictors])


@dataclass(frozen=True)
class OracleVims:
    beta: tuple
    rho: float
    GS_T: tuple
    GS_M: tuple
    SHC: tuple
    SHM: tuple
    MP: tuple
    CP: tuple
    ALE: tuple

    FIELDS = ("GS_T", "GS_M", "SHC", "SHM", "MP", "CP", "ALE")

    def as_dict(self) -> dict:
        return {name: list(getattr(self, name)) for name in self.FIELDS}


def _conditional_shapley(b_self: float, b_other: float, rho: float) -> float:
    lead = b_self + rho * b_other / 2.0
    return lead ** 2 + (rho * b_self / 2.0) ** 2 - rho ** 2 * b_self * lead


def oracle_linear3(beta: Sequence[float], rho: float) -> OracleVims:
    """Population importances of f = b1 x1 + b2 x2 + b3 x3 with corr(x1, x2) = rho."""
    if len(beta) != 3:
        raise ValueError("beta must have exactly 3 coefficients")
    rho = float(rho)
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must satisfy |rho| < 1")
    b1, b2, b3 = (float(b) for b in beta)
    keep = 1.0 - rho ** 2
    sq = (b1 ** 2, b2 ** 2, b3 ** 2)
    return OracleVims(
        beta=(b1, b2, b3),
        rho=rho,
        GS_T=(sq[0] * keep, sq[1] * keep, sq[2]),
        GS_M=((b1 + rho * b2) ** 2, (rho * b1 + b2) ** 2, sq[2]),
        SHC=(_conditional_shapley(b1, b2, rho), _conditional_shapley(b2, b1, rho), sq[2]),
        SHM=sq,
        MP=tuple(2.0 * s for s in sq),
        CP=(2.0 * sq[0] * keep, 2.0 * sq[1] * keep, 2.0 * sq[2]),
        ALE=sq,
    )
