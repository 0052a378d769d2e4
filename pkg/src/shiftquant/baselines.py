"""Competitor quantifiers: CC, PCC, ACC, PACC, EMQ, MLLS and HDy.

Each public function takes a fitted classifier and datasets. The ``*_from_*``
variants work directly on posterior matrices so the benchmark can feed them
cross-fitted calibration predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import softmax

from .core import (
    LabeledDataset,
    ProbabilityVector,
    SimplexLike,
    UnlabeledDataset,
    ZeroClassProbability,
    class_moments_from_values,
    make_simplex,
    project_to_simplex,
    solve_prevalence_system,
)
from .classifier import (
    DEFAULT_L2_GRID,
    SoftClassifier,
    cross_validate,
    fit,
    fit_temperature,
    out_of_fold_logits,
)

Mode = Literal["hard", "soft"]

EM_TOL = 1e-8
EM_MAX_ITER = 10_000
HDY_BINS = 8
HDY_STEP = 0.01


class EmptyTestSet(ValueError):
    pass


class NotBinary(ValueError):
    pass


@dataclass(frozen=True)
class QuantifierOutput:
    estimate: np.ndarray
    clipped: ProbabilityVector
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def of(cls, estimate, **diagnostics) -> "QuantifierOutput":
        est = np.atleast_1d(np.asarray(estimate, dtype=float))
        return cls(est, project_to_simplex(est), diagnostics)


def _check_test(n: int) -> None:
    if n == 0:
        raise EmptyTestSet("test set is empty")


def _features(probs: np.ndarray, mode: Mode) -> np.ndarray:
    """Matching function values for classes 1..m: one-hot argmax or probabilities."""
    if mode == "hard":
        k = probs.shape[1]
        return np.eye(k)[np.argmax(probs, axis=1)][:, 1:]
    if mode == "soft":
        return probs[:, 1:]
    raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")


def cc_from_posteriors(test_probs: np.ndarray, mode: Mode = "hard") -> QuantifierOutput:
    _check_test(test_probs.shape[0])
    return QuantifierOutput.of(_features(test_probs, mode).mean(axis=0), method="cc" if mode == "hard" else "pcc")


def cc(clf: SoftClassifier, test: UnlabeledDataset, mode: Mode = "hard") -> QuantifierOutput:
    _check_test(test.n)
    return cc_from_posteriors(clf.proba(test.features), mode)


def acc_from_posteriors(
    calib_probs: np.ndarray, calib_labels: np.ndarray, test_probs: np.ndarray, mode: Mode = "hard"
) -> QuantifierOutput:
    _check_test(test_probs.shape[0])
    m = calib_probs.shape[1] - 1
    mom = class_moments_from_values(_features(calib_probs, mode), calib_labels, m)
    a = mom.a_matrix()
    rhs = _features(test_probs, mode).mean(axis=0) - mom.means[0]
    sol = solve_prevalence_system(a, rhs)
    sv = np.linalg.svd(a, compute_uv=False)
    cond = float(sv.max() / sv.min()) if sv.min() > 0 else float("inf")
    if sol is None:
        return QuantifierOutput.of(np.full(m, 1.0 / (m + 1)), singular=True, condition=cond)
    return QuantifierOutput.of(sol, singular=False, condition=cond)


def acc(clf: SoftClassifier, calib: LabeledDataset, test: UnlabeledDataset, mode: Mode = "hard") -> QuantifierOutput:
    _check_test(test.n)
    calib.require_all_classes("calibration set")
    return acc_from_posteriors(clf.proba(calib.features), calib.labels, clf.proba(test.features), mode)


def em_objective(probs: np.ndarray, pi_tr: SimplexLike, beta: SimplexLike) -> float:
    """Mean log of sum_y beta_y f_y(x_i) / pi_tr_y over the test rows."""
    ratio = np.asarray(probs) / make_simplex(pi_tr).full
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(ratio @ make_simplex(beta).full)))


def em_from_posteriors(
    test_probs: np.ndarray, pi_tr: SimplexLike, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER
) -> QuantifierOutput:
    """Fixed-point prior adjustment started at the training prior."""
    _check_test(test_probs.shape[0])
    prior = make_simplex(pi_tr).full
    if np.any(prior <= 0):
        raise ZeroClassProbability("training prior has a zero entry")
    ratio = np.asarray(test_probs, dtype=float) / prior
    beta = prior.copy()
    trace = [em_objective(test_probs, pi_tr, ProbabilityVector(beta[1:]))]
    it = 0
    converged = False
    while it < max_iter:
        w = ratio * beta
        w /= w.sum(axis=1, keepdims=True)
        new = w.mean(axis=0)
        new /= new.sum()
        it += 1
        change = float(np.abs(new - beta).sum())
        beta = new
        trace.append(float(np.mean(np.log(ratio @ beta))))
        if change < tol:
            converged = True
            break
    flat = bool(np.ptp(ratio, axis=1).max() < 1e-12) if ratio.size else True
    return QuantifierOutput.of(beta[1:], iterations=it, converged=converged, objective=trace[-1],
                               objective_trace=trace, flat_objective=flat)


def emq(clf: SoftClassifier, pi_tr: SimplexLike, test: UnlabeledDataset, tol: float = EM_TOL,
        max_iter: int = EM_MAX_ITER) -> QuantifierOutput:
    _check_test(test.n)
    return em_from_posteriors(clf.proba(test.features), pi_tr, tol, max_iter)


def mlls(clf_calibrated: SoftClassifier, pi_tr: SimplexLike, test: UnlabeledDataset, tol: float = EM_TOL,
         max_iter: int = EM_MAX_ITER) -> QuantifierOutput:
    """Same objective family as EMQ, evaluated on calibrated posteriors."""
    _check_test(test.n)
    return em_from_posteriors(clf_calibrated.proba(test.features), pi_tr, tol, max_iter)


def hellinger(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)))


def _hist(values: np.ndarray, n_bins: int) -> np.ndarray:
    h, _ = np.histogram(values, bins=n_bins, range=(0.0, 1.0))
    return h / max(h.sum(), 1)


def hdy_from_posteriors(
    calib_pos: np.ndarray, calib_labels: np.ndarray, test_pos: np.ndarray,
    n_bins: int = HDY_BINS, grid_step: float = HDY_STEP,
) -> QuantifierOutput:
    """Binary HDy on class-1 posteriors."""
    _check_test(test_pos.size)
    calib_labels = np.asarray(calib_labels)
    h0 = _hist(calib_pos[calib_labels == 0], n_bins)
    h1 = _hist(calib_pos[calib_labels == 1], n_bins)
    ht = _hist(test_pos, n_bins)
    steps = int(round(1.0 / grid_step))
    grid = np.arange(steps + 1) * grid_step
    dist = np.array([hellinger((1 - b) * h0 + b * h1, ht) for b in grid])
    ties = np.nonzero(dist <= dist.min() + 1e-12)[0]
    pick = ties[np.argmin(np.abs(grid[ties] - 0.5))]
    return QuantifierOutput.of([grid[pick]], distance=float(dist[pick]), ties=int(ties.size))


def hdy(clf: SoftClassifier, calib: LabeledDataset, test: UnlabeledDataset,
        n_bins: int = HDY_BINS, grid_step: float = HDY_STEP) -> QuantifierOutput:
    if clf.m != 1 or calib.m != 1:
        raise NotBinary("HDy is implemented for binary problems only")
    _check_test(test.n)
    calib.require_all_classes("calibration set")
    return hdy_from_posteriors(clf.proba(calib.features)[:, 1], calib.labels, clf.proba(test.features)[:, 1],
                               n_bins, grid_step)


@dataclass(frozen=True)
class FittedContext:
    """A classifier fitted on a training set plus cross-fitted calibration posteriors."""

    clf: SoftClassifier
    calib_logits: np.ndarray
    calib_labels: np.ndarray
    temperature: float
    pi_tr: ProbabilityVector
    l2: float

    @property
    def calibrated(self) -> SoftClassifier:
        return replace(self.clf, temperature=self.temperature)


def fit_context(train: LabeledDataset, seed: int = 0, l2_grid=DEFAULT_L2_GRID, folds: int = 3) -> FittedContext:
    l2 = cross_validate(train, l2_grid, folds, seed)
    clf = fit(train, l2)
    oof = out_of_fold_logits(train, l2, folds, seed)
    temp = fit_temperature(oof, train.labels)
    return FittedContext(clf, oof, train.labels, temp, train.prevalence(), l2)


METHODS = ("cc", "pcc", "acc", "pacc", "emq", "mlls", "hdy")


def run_method(name: str, ctx: FittedContext, test: UnlabeledDataset) -> QuantifierOutput:
    """Dispatch one baseline on a fitted context."""
    calib_probs = softmax(ctx.calib_logits, axis=1)
    if name in ("cc", "pcc"):
        return cc(ctx.clf, test, "hard" if name == "cc" else "soft")
    if name in ("acc", "pacc"):
        _check_test(test.n)
        mode = "hard" if name == "acc" else "soft"
        return acc_from_posteriors(calib_probs, ctx.calib_labels, ctx.clf.proba(test.features), mode)
    if name == "emq":
        return emq(ctx.clf, ctx.pi_tr, test)
    if name == "mlls":
        return mlls(ctx.calibrated, ctx.pi_tr, test)
    if name == "hdy":
        if ctx.clf.m != 1:
            raise NotBinary("HDy is implemented for binary problems only")
        _check_test(test.n)
        return hdy_from_posteriors(calib_probs[:, 1], ctx.calib_labels, ctx.clf.proba(test.features)[:, 1])
    raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHODS)}")
