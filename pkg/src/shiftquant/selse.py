"""Score-based prevalence estimator with cross-fitting.

The training and test sets are each halved. On one half a preliminary
quantifier gives a mixture weight gamma_hat, and a kernel score estimate is fit
per class by solving a quadratically constrained quadratic program. The
other half then supplies an ACC-style linear system in the estimated scores.
Swapping the halves and averaging gives the final estimate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .baselines import fit_context, run_method
from .classifier import DEFAULT_L2_GRID
from .core import (
    LabeledDataset,
    ProbabilityVector,
    SimplexLike,
    UnlabeledDataset,
    class_moments_from_values,
    gamma_star,
    make_simplex,
    mixture_moments,
    project_to_simplex,
    solve_prevalence_system,
)
from .oracle import rng_for
from .qcqp import IllConditioned, QcqpProblem, solve
from .rkhs import DegenerateGeometry, RkhsFunction, cross_kernel, gram, median_heuristic

log = logging.getLogger(__name__)

MIN_PER_CLASS_FOR_SELECTION = 8
VALIDATION_FRACTION = 0.25
RCOND = 1e-10
LAMBDA_WIDEN = 10.0
LAMBDA_RETRIES = 4

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SelseConfig:
    xi: float = 0.05
    lambda_multipliers: tuple = (1e-3, 1e-2, 1e-1)  # times n_{tr,II}^{-1/2}
    bandwidth_multipliers: tuple = (0.5, 1.0, 2.0)  # times the median heuristic
    support_cap: int = 500
    preliminary: str = "mlls"
    seed: int = 0
    select: bool = True
    l2_grid: tuple = DEFAULT_L2_GRID
    cv_folds: int = 3

    def __post_init__(self):
        if not 0 < self.xi < 0.5:
            raise ValueError("xi must lie in (0, 0.5)")
        if not self.lambda_multipliers or not self.bandwidth_multipliers:
            raise ValueError("hyperparameter grids must be nonempty")
        if min(self.lambda_multipliers) <= 0 or min(self.bandwidth_multipliers) <= 0:
            raise ValueError("grid values must be positive")
        if self.support_cap < 1:
            raise ValueError("support_cap must be positive")


class Half(NamedTuple):
    train: LabeledDataset
    test: UnlabeledDataset


@dataclass(frozen=True)
class ScoreEstimate:
    functions: tuple  # RkhsFunction per class 1..m
    gamma_hat: ProbabilityVector
    lambdas: np.ndarray
    sigmas: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objectives: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def m(self) -> int:
        return len(self.functions)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """(n, m) matrix of estimated score components."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.column_stack([f(x) for f in self.functions])


@dataclass(frozen=True)
class SelseEstimate:
    pi_hat: np.ndarray
    pi_a: np.ndarray
    pi_b: np.ndarray
    degenerate: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def clipped(self) -> ProbabilityVector:
        return project_to_simplex(self.pi_hat)


def _uniform(m: int) -> np.ndarray:
    return np.full(m, 1.0 / (m + 1))


def _halve(idx: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    idx = idx[rng.permutation(idx.size)]
    cut = (idx.size + 1) // 2
    return idx[:cut], idx[cut:]


def split(train: LabeledDataset, test: UnlabeledDataset, seed: int) -> tuple[Half, Half] | None:
    """Stratified halves of the training set and plain halves of the test set.

    Returns None when a class has at most one training point or the test set
    has at most one point.
    """
    if test.n <= 1 or np.any(train.counts() <= 1):
        return None
    rng = rng_for(seed)
    first, second = [], []
    for y in range(train.m + 1):
        a, b = _halve(np.nonzero(train.labels == y)[0], rng)
        first.append(a)
        second.append(b)
    ta, tb = _halve(np.arange(test.n), rng)
    tr_a = np.sort(np.concatenate(first))
    tr_b = np.sort(np.concatenate(second))
    return (Half(train.subset(tr_a), test.subset(np.sort(ta))),
            Half(train.subset(tr_b), test.subset(np.sort(tb))))


def clip_to_box(pi: SimplexLike, xi: float) -> ProbabilityVector:
    """Closest simplex point whose full entries all lie in [xi, 1 - xi]."""
    v = make_simplex(pi).full if isinstance(pi, ProbabilityVector) else np.concatenate(
        [[1.0 - float(np.sum(pi))], np.atleast_1d(np.asarray(pi, dtype=float))])
    k = v.size
    if k * xi > 1.0:
        raise ValueError(f"xi={xi} is infeasible for {k} classes")
    lo, hi = xi, 1.0 - xi
    # sum of clip(v - t) is nonincreasing in t; bisect for sum = 1
    a, b = float(v.min() - hi), float(v.max() - lo)
    for _ in range(200):
        t = 0.5 * (a + b)
        if np.clip(v - t, lo, hi).sum() > 1.0:
            a = t
        else:
            b = t
    full = np.clip(v - 0.5 * (a + b), lo, hi)
    return ProbabilityVector.from_full(full / full.sum())


def preliminary_estimate(half: Half, config: SelseConfig, seed: int) -> np.ndarray:
    ctx = fit_context(half.train, seed, config.l2_grid, config.cv_folds)
    return run_method(config.preliminary, ctx, half.test).estimate


def estimate_gamma(half: Half, pi_tr: SimplexLike, n_te_total: int, n_tr_total: int, config: SelseConfig,
                   seed: int = 0, preliminary: np.ndarray | None = None) -> ProbabilityVector:
    """gamma* evaluated at the clipped preliminary estimate and the total sample sizes."""
    if preliminary is None:
        preliminary = preliminary_estimate(half, config, seed)
    return gamma_star(clip_to_box(preliminary, config.xi), pi_tr, n_te_total, n_tr_total)


def _support(train: LabeledDataset, cap: int, seed: int) -> np.ndarray:
    if train.n <= cap:
        return train.features
    idx = rng_for(seed, 1).choice(train.n, size=cap, replace=False)
    return train.features[np.sort(idx)]


def _class_problem(phi: np.ndarray, labels: np.ndarray, m: int, gamma: ProbabilityVector):
    """Per-class linear terms and the shared mixture covariance of the features."""
    mom = class_moments_from_values(phi, labels, m)
    _, cov = mixture_moments(mom, gamma)
    return mom.means, 0.5 * (cov + cov.T)


def fit_scores(train: LabeledDataset, gamma: ProbabilityVector, lambdas: Sequence[float],
               sigmas: Sequence[float], support_cap: int = 500, seed: int = 0) -> ScoreEstimate:
    """Kernel score estimates for every class with given per-class (lambda, sigma)."""
    m = train.m
    lambdas = np.broadcast_to(np.asarray(lambdas, dtype=float), (m,)).copy()
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (m,)).copy()
    support = _support(train, support_cap, seed)
    cache = {}
    funcs, res, objs = [], [], []
    for y in range(1, m + 1):
        sig = float(sigmas[y - 1])
        if sig not in cache:
            phi = cross_kernel(train.features, support, sig)
            means, cov = _class_problem(phi, train.labels, m, gamma)
            cache[sig] = (means, cov, gram(support, sig))
        means, cov, G = cache[sig]
        p = 0.5 * (means[0] - means[y])
        lam = float(lambdas[y - 1])
        for attempt in range(LAMBDA_RETRIES):
            try:
                sol = solve(QcqpProblem(lam * G, cov, p))
                break
            except IllConditioned:
                if attempt == LAMBDA_RETRIES - 1:
                    raise
                lam *= LAMBDA_WIDEN
                log.warning("ill-conditioned score problem for class %d; widening lambda to %g", y, lam)
        lambdas[y - 1] = lam
        funcs.append(RkhsFunction(sig, support, sol.w))
        res.append(sol.constraint_residual)
        objs.append(sol.objective)
    return ScoreEstimate(tuple(funcs), gamma, lambdas, sigmas, np.asarray(res), np.asarray(objs))


def estimate_score(half: Half, gamma_hat: ProbabilityVector, lambda_y, sigma_y,
                   support_cap: int = 500, seed: int = 0) -> ScoreEstimate:
    return fit_scores(half.train, gamma_hat, lambda_y, sigma_y, support_cap, seed)


def _as_matrix(score: ScoreFn, x: np.ndarray, m: int) -> np.ndarray:
    vals = np.asarray(score(x), dtype=float)
    return vals.reshape(x.shape[0], m)


def system_matrix(train: LabeledDataset, test: UnlabeledDataset, score: ScoreFn) -> tuple[np.ndarray, np.ndarray]:
    m = train.m
    mom = class_moments_from_values(_as_matrix(score, train.features, m), train.labels, m)
    rhs = _as_matrix(score, test.features, m).mean(axis=0) - mom.means[0]
    return mom.a_matrix(), rhs


def solve_system(half: Half, score: ScoreFn) -> tuple[np.ndarray, dict]:
    """Moment-matching solve on a held-out half; singular systems give the uniform vector."""
    a, rhs = system_matrix(half.train, half.test, score)
    sv = np.linalg.svd(a, compute_uv=False)
    cond = float(sv.max() / sv.min()) if sv.min() > 0 else math.inf
    sol = solve_prevalence_system(a, rhs, RCOND)
    if sol is None:
        return _uniform(half.train.m), {"condition": cond, "singular": True}
    return sol, {"condition": cond, "singular": False}


def selection_criterion(val: LabeledDataset, score: ScoreFn, gamma: ProbabilityVector) -> float:
    """Largest eigenvalue of A^{-1} Var_gamma[f] A^{-T} on validation data; +inf if A is singular."""
    m = val.m
    mom = class_moments_from_values(_as_matrix(score, val.features, m), val.labels, m)
    a = mom.a_matrix()
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.max() == 0 or sv.min() < RCOND * sv.max():
        return math.inf
    _, cov = mixture_moments(mom, gamma)
    ainv = np.linalg.inv(a)
    crit = ainv @ cov @ ainv.T
    val_max = float(np.linalg.eigvalsh(0.5 * (crit + crit.T))[-1])
    return val_max if np.isfinite(val_max) else math.inf


def _base_bandwidth(train: LabeledDataset, seed: int) -> float:
    try:
        return median_heuristic(train.features, seed=seed)
    except DegenerateGeometry:
        log.warning("all training points coincide; using unit bandwidth")
        return 1.0


def _midpoint(values: Sequence[float]) -> float:
    vals = sorted(values)
    return float(vals[(len(vals) - 1) // 2])


def select_hyperparams(half: Half, gamma_hat: ProbabilityVector, config: SelseConfig,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray, dict]:
    """Per-class (lambda, sigma) from one shared grid cell chosen on a 75/25 split."""
    train = half.train
    m = train.m
    base_sigma = _base_bandwidth(train, seed)
    lam_scale = 1.0 / math.sqrt(train.n)
    lam_grid = [mult * lam_scale for mult in config.lambda_multipliers]
    sig_grid = [mult * base_sigma for mult in config.bandwidth_multipliers]
    cells = [(lam, sig) for lam in lam_grid for sig in sig_grid]
    if len(cells) == 1 or not config.select:
        lam, sig = (cells[0] if len(cells) == 1 else (_midpoint(lam_grid), _midpoint(sig_grid)))
        return np.full(m, lam), np.full(m, sig), {"criteria": None}
    if train.counts().min() < MIN_PER_CLASS_FOR_SELECTION:
        log.warning("too few samples per class for hyperparameter selection; using grid midpoints")
        return np.full(m, _midpoint(lam_grid)), np.full(m, _midpoint(sig_grid)), {"criteria": None, "fallback": True}
    rng = rng_for(seed, 2)
    fit_idx, val_idx = [], []
    for y in range(m + 1):
        idx = np.nonzero(train.labels == y)[0]
        idx = idx[rng.permutation(idx.size)]
        cut = int(round(VALIDATION_FRACTION * idx.size))
        val_idx.append(idx[:cut])
        fit_idx.append(idx[cut:])
    fit_part = train.subset(np.sort(np.concatenate(fit_idx)))
    val_part = train.subset(np.sort(np.concatenate(val_idx)))
    best = (math.inf, -math.inf, cells[len(cells) // 2])
    criteria = []
    for lam, sig in cells:
        try:
            est = fit_scores(fit_part, gamma_hat, lam, sig, config.support_cap, seed)
            crit = selection_criterion(val_part, est, gamma_hat)
        except IllConditioned:
            crit = math.inf
        criteria.append(crit)
        if crit < best[0] - 1e-12 * max(1.0, abs(crit)) or (
            abs(crit - best[0]) <= 1e-12 * max(1.0, abs(crit)) and lam > best[1]
        ):
            best = (crit, lam, (lam, sig))
    lam, sig = best[2]
    return np.full(m, lam), np.full(m, sig), {"criteria": criteria, "cells": cells}


def _pass(fit_half: Half, eval_half: Half, pi_tr: ProbabilityVector, n_te: int, n_tr: int,
          config: SelseConfig, seed: int) -> tuple[np.ndarray, ScoreEstimate, dict]:
    gamma_hat = estimate_gamma(fit_half, pi_tr, n_te, n_tr, config, seed)
    lams, sigs, sel = select_hyperparams(fit_half, gamma_hat, config, seed)
    score = estimate_score(fit_half, gamma_hat, lams, sigs, config.support_cap, seed)
    pi, info = solve_system(eval_half, score)
    info.update(gamma_hat=gamma_hat.entries.tolist(), lambdas=lams.tolist(), sigmas=sigs.tolist(),
                residuals=score.residuals.tolist(), objectives=score.objectives.tolist(),
                criteria=sel.get("criteria"))
    return pi, score, info


def quantify(train: LabeledDataset, test: UnlabeledDataset, config: SelseConfig | None = None,
             return_scores: bool = False):
    """Full estimator; degenerate splits give the uniform vector with the flag set."""
    config = config or SelseConfig()
    m = train.m
    halves = split(train, test, config.seed)
    if halves is None:
        u = _uniform(m)
        out = SelseEstimate(u, u.copy(), u.copy(), True, {"reason": "degenerate split"})
        return (out, ()) if return_scores else out
    out, scores = cross_fit(*halves, train.prevalence(), test.n, train.n, config)
    return (out, scores) if return_scores else out


def cross_fit(one: Half, two: Half, pi_tr: ProbabilityVector, n_te: int, n_tr: int,
              config: SelseConfig) -> tuple[SelseEstimate, tuple[ScoreEstimate, ScoreEstimate]]:
    """Pass (a) fits on ``two`` and solves on ``one``; pass (b) swaps the roles."""
    pi_a, score_a, info_a = _pass(two, one, pi_tr, n_te, n_tr, config, config.seed)
    pi_b, score_b, info_b = _pass(one, two, pi_tr, n_te, n_tr, config, config.seed)
    degenerate = bool(info_a["singular"] and info_b["singular"])
    out = SelseEstimate(0.5 * (pi_a + pi_b), pi_a, pi_b, degenerate, {"a": info_a, "b": info_b})
    return out, (score_a, score_b)


def quantify_with_score(train: LabeledDataset, test: UnlabeledDataset, score: ScoreFn, seed: int = 0) -> SelseEstimate:
    """Split, solve and average with a fixed, externally supplied score function."""
    m = train.m
    halves = split(train, test, seed)
    if halves is None:
        u = _uniform(m)
        return SelseEstimate(u, u.copy(), u.copy(), True, {"reason": "degenerate split"})
    one, two = halves
    pi_a, info_a = solve_system(one, score)
    pi_b, info_b = solve_system(two, score)
    return SelseEstimate(0.5 * (pi_a + pi_b), pi_a, pi_b, False, {"a": info_a, "b": info_b})


def affine_score(score: ScoreFn, B: np.ndarray, c: np.ndarray) -> ScoreFn:
    """The score x -> B s(x) + c, applied row-wise."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return lambda x: np.asarray(score(x)) @ B.T + c
