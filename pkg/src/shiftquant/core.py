"""Simplex arithmetic, dataset containers and class/mixture moment operators.

Probability vectors follow the convention that only classes 1..m are stored;
the class-0 entry is implied as one minus the sum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

SIMPLEX_TOL = 1e-12


class NotASimplexPoint(ValueError):
    pass


class ZeroClassProbability(ValueError):
    pass


class EmptyClass(ValueError):
    def __init__(self, label: int, where: str = ""):
        self.label = label
        msg = f"class {label} has no samples"
        super().__init__(msg + (f" in {where}" if where else ""))


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ProbabilityVector:
    """Point of the (m+1)-dimensional probability simplex, class 0 implied."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.entries, dtype=float)).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise NotASimplexPoint(f"expected a non-empty 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NotASimplexPoint("non-finite entry")
        total = arr.sum()
        if np.any(arr < -SIMPLEX_TOL) or np.any(arr > 1 + SIMPLEX_TOL) or total > 1 + SIMPLEX_TOL:
            raise NotASimplexPoint(f"{arr.tolist()} is outside the simplex")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def m(self) -> int:
        return self.entries.size

    @property
    def zero(self) -> float:
        return float(1.0 - self.entries.sum())

    @property
    def full(self) -> np.ndarray:
        """All m+1 entries, class 0 first."""
        return np.concatenate([[self.zero], self.entries])

    @classmethod
    def from_full(cls, full: Sequence[float]) -> "ProbabilityVector":
        full = np.asarray(full, dtype=float)
        if abs(full.sum() - 1.0) > 1e-9:
            raise NotASimplexPoint(f"full vector sums to {full.sum()}")
        return cls(full[1:])

    @classmethod
    def uniform(cls, m: int) -> "ProbabilityVector":
        return cls(np.full(m, 1.0 / (m + 1)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __len__(self):
        return self.m


SimplexLike = Union[ProbabilityVector, Sequence[float], np.ndarray, float]


def make_simplex(values: SimplexLike) -> ProbabilityVector:
    if isinstance(values, ProbabilityVector):
        return values
    return ProbabilityVector(np.atleast_1d(np.asarray(values, dtype=float)))


def _positive_full(beta: SimplexLike) -> np.ndarray:
    full = make_simplex(beta).full
    if np.any(full <= 0):
        raise ZeroClassProbability(f"all class probabilities must be positive, got {full.tolist()}")
    return full


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    m: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 1)
        y = np.asarray(self.labels, dtype=int).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise DimensionMismatch(f"{x.shape[0]} feature rows vs {y.size} labels")
        if self.m < 1:
            raise ValueError("m must be positive")
        if y.size and (y.min() < 0 or y.max() > self.m):
            raise ValueError(f"labels must lie in 0..{self.m}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.m + 1)

    def prevalence(self) -> ProbabilityVector:
        c = self.counts()
        return ProbabilityVector(c[1:] / c.sum())

    def class_features(self, y: int) -> np.ndarray:
        return self.features[self.labels == y]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx], self.m)

    def require_all_classes(self, where: str = "") -> None:
        c = self.counts()
        for y in range(self.m + 1):
            if c[y] == 0:
                raise EmptyClass(y, where)

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.features)


@dataclass(frozen=True)
class UnlabeledDataset:
    features: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(0, 1)
        if x.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D feature matrix, got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "UnlabeledDataset":
        return UnlabeledDataset(self.features[np.asarray(idx, dtype=int)])


def gamma_star(pi_star: SimplexLike, pi_tr: SimplexLike, n_te: float, n_tr: float) -> ProbabilityVector:
    """Sample-size-weighted mixing vector at which the efficient score is evaluated.

    Only the ratio n_te/n_tr matters, so rates (tau, 1 - tau) may be passed
    instead of counts.
    """
    if n_te <= 0 or n_tr <= 0:
        raise ValueError("sample sizes must be positive")
    a = make_simplex(pi_star).full
    b = _positive_full(pi_tr)
    if np.any(a <= 0):
        raise ZeroClassProbability("pi_star entries must be positive")
    ratio = a**2 / b
    num = a / n_te + ratio / n_tr
    den = 1.0 / n_te + ratio.sum() / n_tr
    full = num / den
    return ProbabilityVector(full[1:])


def gamma_bounds(m: int, xi: float) -> tuple[float, float]:
    """Lower/upper bounds on every entry of gamma_star when all priors lie in [xi, 1 - xi]."""
    if not 0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 0.5)")
    lo = 1.0 / (1.0 + m * ((1 - xi) / xi) ** 3)
    hi = max(1.0 - xi, 1.0 / (1.0 + m * (xi / (1 - xi)) ** 3))
    return lo, hi


def cat_fisher_inv(beta: SimplexLike) -> np.ndarray:
    """Covariance of the one-hot label vector (classes 1..m) under Cat(beta)."""
    b = _positive_full(beta)[1:]
    return np.diag(b) - np.outer(b, b)


def cat_fisher(beta: SimplexLike) -> np.ndarray:
    full = _positive_full(beta)
    b0, b = full[0], full[1:]
    return np.diag(1.0 / b) + 1.0 / b0


@dataclass(frozen=True)
class ClassMoments:
    """Per-class first and second empirical moments of a vector-valued function."""

    means: np.ndarray  # (m+1, q)
    second: np.ndarray  # (m+1, q, q)
    counts: np.ndarray  # (m+1,)

    @property
    def m(self) -> int:
        return self.means.shape[0] - 1

    def a_matrix(self) -> np.ndarray:
        """Columns E_y[f] - E_0[f] for y = 1..m, shape (q, m)."""
        return (self.means[1:] - self.means[0]).T

    def variances(self) -> np.ndarray:
        return self.second - np.einsum("ki,kj->kij", self.means, self.means)


def class_moments_from_values(values: np.ndarray, labels: np.ndarray, m: int) -> ClassMoments:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    labels = np.asarray(labels, dtype=int)
    q = values.shape[1]
    means = np.empty((m + 1, q))
    second = np.empty((m + 1, q, q))
    counts = np.bincount(labels, minlength=m + 1)
    for y in range(m + 1):
        if counts[y] == 0:
            raise EmptyClass(y)
        v = values[labels == y]
        means[y] = v.mean(axis=0)
        s = v.T @ v / v.shape[0]
        second[y] = 0.5 * (s + s.T)
    return ClassMoments(means, second, counts)


def class_moments(data: LabeledDataset, f: Callable[[np.ndarray], np.ndarray]) -> ClassMoments:
    """Moments of ``f`` per class. ``f`` maps an (n, d) feature matrix to (n,) or (n, q)."""
    values = np.asarray(f(data.features), dtype=float)
    return class_moments_from_values(values.reshape(data.n, -1), data.labels, data.m)


def mixture_moments(moments: ClassMoments, beta: SimplexLike) -> tuple[np.ndarray, np.ndarray]:
    w = make_simplex(beta).full
    if w.size != moments.m + 1:
        raise DimensionMismatch(f"beta has {w.size} classes, moments have {moments.m + 1}")
    mean = w @ moments.means
    cov = np.tensordot(w, moments.second, axes=1) - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)


def solve_prevalence_system(a: np.ndarray, rhs: np.ndarray, rcond: float = 1e-10) -> np.ndarray | None:
    """Solve A pi = rhs; ``None`` when A is numerically singular."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    sv = np.linalg.svd(a, compute_uv=False)
    if not np.all(np.isfinite(sv)) or sv.max() == 0 or sv.min() < rcond * sv.max():
        return None
    return np.linalg.solve(a, rhs)


def project_to_simplex(v: np.ndarray) -> ProbabilityVector:
    """Euclidean projection of a raw m-vector estimate onto the simplex (full vector sense)."""
    v = np.asarray(v, dtype=float)
    # project the full (m+1)-vector with class 0 implied by 1 - sum
    full = np.concatenate([[1.0 - v.sum()], v])
    u = np.sort(full)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, full.size + 1)
    rho = np.nonzero(u * k > css - 1)[0][-1]
    theta = (css[rho] - 1) / (rho + 1.0)
    p = np.maximum(full - theta, 0.0)
    p /= p.sum()
    return ProbabilityVector(np.clip(p[1:], 0.0, 1.0))
