"""Frame saliency ranking, its Gaussian-perturbed smoothing, and the
Monte Carlo vector-Jacobian product that lets gradients flow through the
otherwise piecewise-constant sort.

The smoothed ranking matrix is the expectation of the hard permutation
matrix of ``s + sigma * z`` over standard-normal ``z``, estimated with
``n_samples`` common-random-number draws.  The same draws drive the
gradient estimate, so a loss value and its gradient always refer to the
same randomness.

Numeric note: scores and noise are combined and compared in float64
here (outputs stay float32).  Ranking is decided purely by comparisons,
and float32 additions near ties flip comparisons often enough to break
the exact shift-invariance guarantee; float64 pushes those rounding
events below any realistic sample count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import F32, RandomStream, ShapeError, matmul


@dataclass(frozen=True)
class PerturbConfig:
    """Smoothing parameters: noise scale, sample count, seed."""

    sigma: float = 0.05
    n_samples: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class SortPermutation:
    """Hard descending sort: order[j] is the frame ranked j-th; matrix is
    the corresponding permutation matrix (column j one-hot at order[j])."""

    order: np.ndarray   # int64 [T]
    matrix: np.ndarray  # float32 [T, T]


@dataclass(frozen=True)
class SoftRankMatrix:
    """Monte Carlo estimate of the smoothed ranking matrix."""

    matrix: np.ndarray  # float32 [T, T], doubly stochastic up to MC accumulation
    sample_count: int
    sigma: float
    seed: int


class TimeIndexMap(NamedTuple):
    """Original time index of each frame in the two parts of a split."""

    saliency: np.ndarray      # int64 [K]
    non_saliency: np.ndarray  # int64 [T - K]


def _check_scores(s) -> np.ndarray:
    s = np.asarray(s)
    if s.ndim != 1 or s.shape[0] < 1:
        raise ShapeError(f"scores must be a non-empty vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s.astype(np.float64)


def _orders(perturbed: np.ndarray) -> np.ndarray:
    # descending sort; stable kind breaks ties toward the smaller frame index
    return np.argsort(-perturbed, axis=-1, kind="stable")


def _matrix_from_order(order: np.ndarray) -> np.ndarray:
    t = order.shape[0]
    m = np.zeros((t, t), dtype=F32)
    m[order, np.arange(t)] = F32(1)
    return m


def hard_rank(s) -> SortPermutation:
    """Descending sort permutation of a score vector (ties: smaller index first)."""
    s = _check_scores(s)
    order = _orders(s)
    return SortPermutation(order=order, matrix=_matrix_from_order(order))


def apply_sort(x: np.ndarray, perm: SortPermutation) -> np.ndarray:
    """Reorder frames (axis 0) into rank order."""
    x = np.asarray(x)
    if x.shape[0] != perm.order.shape[0]:
        raise ShapeError(f"cannot sort {x.shape[0]} frames with a {perm.order.shape[0]}-frame permutation")
    return x[perm.order]


def topk_split(tokens: np.ndarray, perm: SortPermutation, k: int):
    """Split frames into the top-k saliency part and the rest, both in rank
    order, returning (saliency, non_saliency, TimeIndexMap)."""
    tokens = np.asarray(tokens)
    t = perm.order.shape[0]
    if tokens.shape[0] != t:
        raise ShapeError(f"{tokens.shape[0]} frames vs {t}-frame permutation")
    if not (1 <= k <= t):
        raise ShapeError(f"k must be in [1, {t}], got {k}")
    ordered = tokens[perm.order]
    times = TimeIndexMap(
        saliency=perm.order[:k].copy(),
        non_saliency=perm.order[k:].copy(),
    )
    return ordered[:k], ordered[k:], times


def _sample_orders(s64: np.ndarray, cfg: PerturbConfig) -> tuple[np.ndarray, np.ndarray]:
    """Common-random-number draws and the per-sample hard orders."""
    z = RandomStream(cfg.seed).gaussian64((cfg.n_samples, s64.shape[0]))
    orders = _orders(s64[None, :] + cfg.sigma * z)
    return orders, z


def perturbed_rank(s, cfg: PerturbConfig) -> SoftRankMatrix:
    """Monte Carlo estimate of the noise-smoothed ranking matrix."""
    s64 = _check_scores(s)
    t = s64.shape[0]
    orders, _ = _sample_orders(s64, cfg)
    flat = orders * t + np.arange(t)[None, :]
    counts = np.bincount(flat.ravel(), minlength=t * t)
    m = (counts.astype(np.float64).reshape(t, t) / cfg.n_samples).astype(F32)
    return SoftRankMatrix(matrix=m, sample_count=cfg.n_samples, sigma=cfg.sigma, seed=cfg.seed)


def perturbed_rank_vjp(s, cfg: PerturbConfig, grad_matrix: np.ndarray) -> np.ndarray:
    """Pull an upstream gradient on the smoothed ranking matrix back to the
    scores: ds_i = (1 / (n * sigma)) * sum_j (<G, Y(s + sigma z_j)> - mean)
    * z_j[i], using the same draws as perturbed_rank for the same config.
    The mean subtraction is a variance-reducing control variate with no
    effect on the expectation beyond O(1/n)."""
    _, ds = perturbed_objective(s, cfg, grad_matrix)
    return ds


def perturbed_objective(s, cfg: PerturbConfig, grad_matrix: np.ndarray) -> tuple[float, np.ndarray]:
    """Fused <G, smoothed-rank(s)> value and its score gradient from one
    set of draws; equals (sum(G * perturbed_rank(s).matrix),
    perturbed_rank_vjp(s, cfg, G)) by construction."""
    s64 = _check_scores(s)
    t = s64.shape[0]
    g = np.asarray(grad_matrix, dtype=np.float64)
    if g.shape != (t, t):
        raise ShapeError(f"gradient matrix must be {t}x{t}, got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient matrix must be finite")
    orders, z = _sample_orders(s64, cfg)
    # per-sample Frobenius products <G, Y_j>, then correlate with the noise;
    # subtracting the sample mean is a control variate: the expectation is
    # untouched up to O(1/n) while the variance no longer blows up once the
    # ranking saturates (all samples equal -> rounding-level gradient)
    dots = g[orders, np.arange(t)[None, :]].sum(axis=1)
    ds = (dots - dots.mean()) @ z / (cfg.n_samples * cfg.sigma)
    return float(dots.mean()), ds.astype(F32)


def soft_sort_apply(x: np.ndarray, soft: SoftRankMatrix) -> np.ndarray:
    """Smoothed reordering: position i of the output mixes frames with the
    weights in column i of the soft matrix."""
    x = np.asarray(x, dtype=F32)
    t = soft.matrix.shape[0]
    if x.shape[0] != t:
        raise ShapeError(f"{x.shape[0]} frames vs {t}-frame soft matrix")
    mixed = matmul(soft.matrix.T, x.reshape(t, -1))
    return mixed.reshape(x.shape)
