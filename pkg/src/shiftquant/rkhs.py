"""Gaussian kernel, Gram matrices and representer-form functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .core import DimensionMismatch

MEDIAN_CAP = 500


class DegenerateGeometry(ValueError):
    pass


def gaussian_kernel(x, y, sigma: float) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma**2)))


def cross_kernel(x: np.ndarray, support: np.ndarray, sigma: float) -> np.ndarray:
    """Kernel matrix K[i, j] = k(x_i, support_j)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    support = np.atleast_2d(np.asarray(support, dtype=float))
    if x.shape[1] != support.shape[1]:
        raise DimensionMismatch(f"feature dimension {x.shape[1]} vs support dimension {support.shape[1]}")
    d2 = cdist(x, support, "sqeuclidean")
    return np.exp(-d2 / (2.0 * sigma**2))


def gram(points: np.ndarray, sigma: float) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k = cross_kernel(points, points, sigma)
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return k


@dataclass(frozen=True)
class RkhsFunction:
    sigma: float
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        s = np.atleast_2d(np.asarray(self.support, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if s.shape[0] != w.size:
            raise DimensionMismatch(f"{s.shape[0]} support points vs {w.size} weights")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on an (n, d) matrix."""
        return cross_kernel(x, self.support, self.sigma) @ self.weights

    def norm_squared(self) -> float:
        return float(self.weights @ gram(self.support, self.sigma) @ self.weights)


def evaluate(f: RkhsFunction, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size != f.support.shape[1]:
        raise DimensionMismatch(f"point of shape {x.shape} vs support dimension {f.support.shape[1]}")
    return float(f(x[None, :])[0])


def median_heuristic(points: np.ndarray, cap: int = MEDIAN_CAP, seed: int = 0) -> float:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 2:
        raise ValueError("need at least two points")
    if points.shape[0] > cap:
        idx = np.random.default_rng(seed).choice(points.shape[0], size=cap, replace=False)
        points = points[np.sort(idx)]
    med = float(np.median(pdist(points)))
    if med <= 0:
        raise DegenerateGeometry("median pairwise distance is zero")
    return med
