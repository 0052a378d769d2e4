"""L2-penalised multinomial logistic regression, stratified k-fold CV and
single-parameter temperature scaling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax, softmax

from .core import DimensionMismatch, EmptyClass, LabeledDataset, ProbabilityVector

log = logging.getLogger(__name__)

DEFAULT_L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
GRAD_TOL = 1e-6
LOG_T_BOX = (-3.0, 3.0)


@dataclass(frozen=True)
class SoftClassifier:
    weights: np.ndarray  # (m+1, d+1), bias in the last column
    mean: np.ndarray
    scale: np.ndarray
    temperature: float = 1.0
    objective_trace: tuple = ()

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError("standardisation scales must be positive")

    @property
    def m(self) -> int:
        return self.weights.shape[0] - 1

    @property
    def d(self) -> int:
        return self.weights.shape[1] - 1

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise DimensionMismatch(f"classifier expects {self.d} features, got {x.shape[1]}")
        xs = (x - self.mean) / self.scale
        return xs @ self.weights[:, :-1].T + self.weights[:, -1]

    def proba(self, x: np.ndarray) -> np.ndarray:
        """(n, m+1) matrix of class probabilities."""
        return softmax(self.logits(x) / self.temperature, axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)


def predict_proba(clf: SoftClassifier, x) -> ProbabilityVector:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DimensionMismatch("predict_proba takes a single feature row")
    return ProbabilityVector.from_full(clf.proba(x[None, :])[0])


def _penalised_loss(W, xb, onehot, l2):
    z = xb @ W.T
    lp = log_softmax(z, axis=1)
    loss = -np.sum(onehot * lp) / xb.shape[0] + 0.5 * l2 * np.sum(W[:, :-1] ** 2)
    return loss, lp


def _gradient(W, xb, onehot, lp, l2):
    r = (np.exp(lp) - onehot) / xb.shape[0]
    g = r.T @ xb
    g[:, :-1] += l2 * W[:, :-1]
    return g


def fit(train: LabeledDataset, l2: float = 1e-3, max_iters: int = 2000, seed: int = 0) -> SoftClassifier:
    """Penalised log-loss by diagonally preconditioned gradient descent with
    Armijo backtracking. Starts from zero weights, so the result does not
    depend on ``seed``; it is accepted for interface symmetry with CV."""
    del seed
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    train.require_all_classes("training set")
    x = train.features
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    xb = np.hstack([(x - mean) / scale, np.ones((train.n, 1))])
    k = train.m + 1
    onehot = np.eye(k)[train.labels]
    # coordinate-wise curvature bounds of the softmax loss on standardised inputs
    precond = np.full((k, xb.shape[1]), 0.5)
    precond[:, :-1] += l2
    W = np.zeros((k, xb.shape[1]))
    loss, lp = _penalised_loss(W, xb, onehot, l2)
    trace = [loss]
    step = 1.0
    for _ in range(max_iters):
        g = _gradient(W, xb, onehot, lp, l2)
        if np.linalg.norm(g) <= GRAD_TOL:
            break
        d = g / precond
        slope = float(np.sum(g * d))
        step = min(2.0 * step, 1.0)
        while True:
            W_new = W - step * d
            new_loss, new_lp = _penalised_loss(W_new, xb, onehot, l2)
            if new_loss <= loss - 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                W_new, new_loss, new_lp = W, loss, lp
                break
        if new_loss == loss and W_new is W:
            break
        W, loss, lp = W_new, new_loss, new_lp
        trace.append(loss)
    return SoftClassifier(W, mean, scale, 1.0, tuple(trace))


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Fold index arrays; each class is shuffled and dealt round-robin."""
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for y in np.unique(labels):
        idx = np.nonzero(labels == y)[0]
        idx = idx[rng.permutation(idx.size)]
        for j, i in enumerate(idx):
            folds[(j + offset) % k].append(i)
        offset += idx.size
    return [np.sort(np.asarray(f, dtype=int)) for f in folds]


def _feasible_k(train: LabeledDataset, k: int) -> int:
    smallest = int(train.counts().min())
    if smallest < 2:
        raise EmptyClass(int(np.argmin(train.counts())), "cross-validation folds")
    if smallest < k:
        log.warning("reducing CV folds from %d to %d (smallest class has %d samples)", k, smallest, smallest)
        return smallest
    return k


def log_loss(proba: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(proba[np.arange(labels.size), labels], 1e-300, None)
    return float(-np.mean(np.log(p)))


def cross_validate(train: LabeledDataset, grid=DEFAULT_L2_GRID, k: int = 3, seed: int = 0, max_iters: int = 2000) -> float:
    """l2 value with the smallest mean held-out log-loss; ties go to the smaller value."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty l2 grid")
    if len(grid) == 1:
        return float(grid[0])
    if k < 2:
        raise ValueError("k must be at least 2")
    train.require_all_classes("training set")
    k = _feasible_k(train, k)
    folds = stratified_folds(train.labels, k, seed)
    best = (math.inf, math.inf)
    for l2 in grid:
        losses = []
        for held in folds:
            keep = np.setdiff1d(np.arange(train.n), held)
            clf = fit(train.subset(keep), l2, max_iters)
            losses.append(log_loss(clf.proba(train.features[held]), train.labels[held]))
        score = float(np.mean(losses))
        if score < best[0] - 1e-12 or (abs(score - best[0]) <= 1e-12 and l2 < best[1]):
            best = (score, l2)
    return float(best[1])


def out_of_fold_logits(train: LabeledDataset, l2: float, k: int = 3, seed: int = 0, max_iters: int = 2000) -> np.ndarray:
    """Cross-fitted logits: each row scored by a model that never saw it."""
    k = _feasible_k(train, k)
    out = np.empty((train.n, train.m + 1))
    for held in stratified_folds(train.labels, k, seed):
        keep = np.setdiff1d(np.arange(train.n), held)
        out[held] = fit(train.subset(keep), l2, max_iters).logits(train.features[held])
    return out


def _golden_min(f, a: float, b: float, tol: float = 1e-6) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_temperature(logits: np.ndarray, labels: np.ndarray) -> float:
    """Temperature minimising log-loss of softmax(logits / T), searched over log T."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    rows = np.arange(labels.size)

    def nll(log_t):
        return float(-np.mean(log_softmax(logits / math.exp(log_t), axis=1)[rows, labels]))

    return math.exp(_golden_min(nll, *LOG_T_BOX))


def temperature_scale(clf: SoftClassifier, holdout: LabeledDataset) -> SoftClassifier:
    if holdout.n == 0:
        raise EmptyClass(0, "holdout")
    holdout.require_all_classes("holdout")
    return replace(clf, temperature=fit_temperature(clf.logits(holdout.features), holdout.labels))
