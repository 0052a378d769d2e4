"""Known Gaussian mixtures: sampling, true score, Monte-Carlo Fisher information
and the semiparametric efficiency bound for the normalized error."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (
    LabeledDataset,
    ProbabilityVector,
    SimplexLike,
    cat_fisher_inv,
    gamma_star,
    make_simplex,
)

DEFAULT_N_MC = 200_000
SHARD_SIZE = 50_000


class SingularFisherInfo(np.linalg.LinAlgError):
    pass


def rng_for(*keys: int) -> np.random.Generator:
    """Repo-wide generator: PCG64 seeded from a tuple of non-negative ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


@dataclass(frozen=True)
class GaussianMixtureModel:
    means: np.ndarray  # (m+1, d)
    covs: np.ndarray  # (m+1, d, d)
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _logdet: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        k, d = means.shape
        if covs.shape != (k, d, d):
            raise ValueError(f"covariances of shape {covs.shape} do not match means {means.shape}")
        if k < 2:
            raise ValueError("need at least two classes")
        chol = np.linalg.cholesky(covs)  # raises LinAlgError unless SPD
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", logdet)

    @classmethod
    def isotropic(cls, means, scale: float = 1.0) -> "GaussianMixtureModel":
        means = np.atleast_2d(np.asarray(means, dtype=float))
        k, d = means.shape
        return cls(means, np.broadcast_to(scale * np.eye(d), (k, d, d)).copy())

    @property
    def m(self) -> int:
        return self.means.shape[0] - 1

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def log_densities(self, x: np.ndarray) -> np.ndarray:
        """(n, m+1) matrix of log p_y(x_i)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.m + 1))
        const = self.d * np.log(2 * np.pi)
        for y in range(self.m + 1):
            diff = x - self.means[y]
            sol = np.linalg.solve(self._chol[y], diff.T)
            out[:, y] = -0.5 * (const + self._logdet[y] + np.sum(sol * sol, axis=0))
        return out

    def draw_class(self, y: int, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.d))
        return self.means[y] + z @ self._chol[y].T


def draw_labels(pi: SimplexLike, n: int, rng: np.random.Generator) -> np.ndarray:
    full = make_simplex(pi).full
    full = np.clip(full, 0.0, None)
    return rng.choice(full.size, size=n, p=full / full.sum())


def draw_features(model: GaussianMixtureModel, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.empty((labels.size, model.d))
    for y in range(model.m + 1):
        idx = np.nonzero(labels == y)[0]
        if idx.size:
            x[idx] = model.draw_class(y, idx.size, rng)
    return x


def sample(model: GaussianMixtureModel, pi: SimplexLike, n: int, seed: int) -> LabeledDataset:
    """n i.i.d. draws with labels ~ Cat(pi) and class-conditional Gaussian features."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = rng_for(seed)
    labels = draw_labels(pi, n, rng)
    return LabeledDataset(draw_features(model, labels, rng), labels, model.m)


def sample_fixed_counts(model: GaussianMixtureModel, counts, rng: np.random.Generator) -> LabeledDataset:
    labels = np.repeat(np.arange(len(counts)), counts)
    return LabeledDataset(draw_features(model, labels, rng), labels, model.m)


def true_score_matrix(model: GaussianMixtureModel, gamma: SimplexLike, x: np.ndarray) -> np.ndarray:
    """(n, m) matrix of s_gamma(x_i) = (p_y - p_0) / p_gamma, computed in log space."""
    g = make_simplex(gamma).full
    if np.any(g <= 0):
        raise ValueError("gamma entries must be strictly positive")
    logp = model.log_densities(x)
    lmix = logsumexp(logp + np.log(g), axis=1, keepdims=True)
    ratio = np.exp(logp - lmix)
    return ratio[:, 1:] - ratio[:, :1]


def true_score(model: GaussianMixtureModel, gamma: SimplexLike, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return true_score_matrix(model, gamma, x[None, :])[0]


def _fisher_shard(model, gamma, n, seed, shard):
    rng = rng_for(seed, shard)
    labels = draw_labels(gamma, n, rng)
    s = true_score_matrix(model, gamma, draw_features(model, labels, rng))
    return s.T @ s, s.sum(axis=0), (s[:, :, None] * s[:, None, :]).reshape(n, -1)


def mixture_fisher_mc(
    model: GaussianMixtureModel,
    gamma: SimplexLike,
    n_mc: int = DEFAULT_N_MC,
    seed: int = 0,
    return_stderr: bool = False,
):
    """Monte-Carlo estimate of I_gamma = E_gamma[s s'].

    Draws are made in fixed-size shards, each with its own substream derived
    from (seed, shard index), and merged in shard order.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    m = make_simplex(gamma).m
    total = np.zeros((m, m))
    sq = np.zeros(m * m)
    shard = 0
    left = n_mc
    while left > 0:
        k = min(SHARD_SIZE, left)
        outer, _, flat = _fisher_shard(model, gamma, k, seed, shard)
        total += outer
        sq += np.sum(flat**2, axis=0)
        left -= k
        shard += 1
    est = total / n_mc
    est = 0.5 * (est + est.T)
    if not return_stderr:
        return est
    var = np.maximum(sq / n_mc - est.reshape(-1) ** 2, 0.0)
    return est, np.sqrt(var / n_mc).reshape(m, m)


@dataclass(frozen=True)
class EfficiencyBound:
    V: np.ndarray
    normalized: np.ndarray
    tau: float
    pi_star: np.ndarray
    pi_tr: np.ndarray
    gamma: np.ndarray


def efficiency_bound(I_gamma, pi_star: SimplexLike, pi_tr: SimplexLike, tau: float) -> EfficiencyBound:
    """Efficiency bound for a test fraction tau, with I_gamma the mixture Fisher
    information at gamma*(tau) (the caller evaluates it at ``bound_gamma``)."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    pi_star = make_simplex(pi_star)
    pi_tr = make_simplex(pi_tr)
    I = np.atleast_2d(np.asarray(I_gamma, dtype=float))
    if I.shape != (pi_star.m, pi_star.m):
        raise ValueError(f"I_gamma must be {pi_star.m}x{pi_star.m}")
    if not np.all(np.isfinite(I)) or np.linalg.cond(I) > 1e12:
        raise SingularFisherInfo("mixture Fisher information is singular")
    gam = gamma_star(pi_star, pi_tr, tau, 1.0 - tau)
    a, b = pi_star.full, pi_tr.full
    bracket = 1.0 / tau + np.sum(a**2 / b) / (1.0 - tau)
    V = bracket * (np.linalg.inv(I) - cat_fisher_inv(gam)) + cat_fisher_inv(pi_star) / tau
    V = 0.5 * (V + V.T)
    return EfficiencyBound(V, tau * (1 - tau) * V, tau, pi_star.entries.copy(), pi_tr.entries.copy(), gam.entries.copy())


def bound_gamma(pi_star: SimplexLike, pi_tr: SimplexLike, tau: float) -> ProbabilityVector:
    return gamma_star(pi_star, pi_tr, tau, 1.0 - tau)
