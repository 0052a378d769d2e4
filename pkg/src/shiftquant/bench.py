"""Experiment harness: data generation, normalized error, grid runs and results files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baselines import METHODS, NotBinary, fit_context, run_method
from .core import EmptyClass, LabeledDataset, SimplexLike, UnlabeledDataset, make_simplex
from .oracle import GaussianMixtureModel, draw_labels, rng_for, sample_fixed_counts, true_score_matrix
from .selse import SelseConfig, quantify

log = logging.getLogger(__name__)

QUANTIFIERS = METHODS + ("selse",)
DEFAULT_TAUS = (0.2, 0.5, 0.8)
DEFAULT_PI_STARS = (0.05, 0.2, 0.35, 0.5, 0.65, 0.80, 0.95)
DEFAULT_MEANS = ((-1.0, -1.0), (1.0, 1.0))


class ParseError(ValueError):
    def __init__(self, row: int, column: str, message: str = ""):
        super().__init__(f"row {row}, column {column!r}: {message or 'cannot parse'}")
        self.row = row
        self.column = column


class NonNumericFeature(ParseError):
    pass


class MissingColumn(KeyError):
    pass


@dataclass(frozen=True)
class ExperimentGrid:
    n: int = 500
    pi_tr: tuple = (0.5,)
    tau_values: tuple = DEFAULT_TAUS
    pi_star_values: tuple = DEFAULT_PI_STARS
    reps: int = 100
    quantifiers: tuple = QUANTIFIERS
    source: str = "gaussian"  # "gaussian" or a CSV path
    label_column: str = "label"
    means: tuple = DEFAULT_MEANS
    seed: int = 0
    timing: bool = False

    def __post_init__(self):
        if not self.tau_values or not self.pi_star_values or not self.quantifiers:
            raise ValueError("grid must be nonempty")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        for q in self.quantifiers:
            if q not in QUANTIFIERS:
                raise ValueError(f"unknown quantifier {q!r}; valid: {', '.join(QUANTIFIERS)}")
        for tau in self.tau_values:
            if not 0 < tau < 1:
                raise ValueError("tau values must lie in (0, 1)")
            n_te = test_size(self.n, tau)
            if n_te < 2 or self.n - n_te < 2:
                raise ValueError(f"tau={tau} leaves fewer than two points on one side for n={self.n}")
        make_simplex(self.pi_tr)
        for p in self.pi_star_values:
            make_simplex(p)

    @property
    def m(self) -> int:
        return make_simplex(self.pi_tr).m

    def record(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass(frozen=True)
class TrialResult:
    quantifier: str
    tau: float
    pi_star: tuple
    rep: int
    estimate: tuple
    normalized_error: float
    seconds: float
    degenerate: bool


def test_size(n: int, tau: float) -> int:
    return int(round(tau * n))


def normalized_error(pi_hat, pi_star: SimplexLike, tau: float, n: int) -> float:
    if not 0 < tau < 1 or n < 1:
        raise ValueError("need tau in (0, 1) and n >= 1")
    diff = np.atleast_1d(np.asarray(pi_hat, dtype=float)) - make_simplex(pi_star).entries
    return float(math.sqrt(tau * (1 - tau) * n) * np.linalg.norm(diff))


def class_counts(pi: SimplexLike, n: int) -> np.ndarray:
    """round(pi_y n) per class with the largest-remainder rule fixing the total."""
    full = make_simplex(pi).full * n
    counts = np.floor(full).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(full - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def resample(source: LabeledDataset, pi_tr: SimplexLike, pi_star: SimplexLike, n_tr: int, n_te: int,
             seed) -> tuple[LabeledDataset, UnlabeledDataset, np.ndarray]:
    """With-replacement draws: fixed class counts for training, Cat(pi_star) labels for test."""
    source.require_all_classes("source")
    rng = rng_for(*np.atleast_1d(seed))
    pools = [np.nonzero(source.labels == y)[0] for y in range(source.m + 1)]
    counts = class_counts(pi_tr, n_tr)
    tr_idx = np.concatenate([rng.choice(pools[y], size=c, replace=True) for y, c in enumerate(counts)])
    hidden = draw_labels(pi_star, n_te, rng)
    te_idx = np.empty(n_te, dtype=int)
    for y in range(source.m + 1):
        pos = np.nonzero(hidden == y)[0]
        if pos.size:
            te_idx[pos] = rng.choice(pools[y], size=pos.size, replace=True)
    train = LabeledDataset(source.features[tr_idx], source.labels[tr_idx], source.m)
    return train, UnlabeledDataset(source.features[te_idx]), hidden


def synthetic(model: GaussianMixtureModel, pi_tr: SimplexLike, pi_star: SimplexLike, n_tr: int, n_te: int,
              seed) -> tuple[LabeledDataset, UnlabeledDataset, np.ndarray]:
    """Gaussian draws with the same size conventions as ``resample``."""
    rng = rng_for(*np.atleast_1d(seed))
    train = sample_fixed_counts(model, class_counts(pi_tr, n_tr), rng)
    hidden = draw_labels(pi_star, n_te, rng)
    x = np.empty((n_te, model.d))
    for y in range(model.m + 1):
        pos = np.nonzero(hidden == y)[0]
        if pos.size:
            x[pos] = model.draw_class(y, pos.size, rng)
    return train, UnlabeledDataset(x), hidden


def _pi_key(pi) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(pi))


def run_trial(train: LabeledDataset, test: UnlabeledDataset, quantifiers: Sequence[str], seed: int,
              timing: bool = False) -> list[tuple[str, np.ndarray, bool, float]]:
    """Every quantifier on the same data; failures become flagged uniform rows."""
    m = train.m
    out = []
    ctx = None
    for name in quantifiers:
        t0 = time.perf_counter()
        degenerate = False
        try:
            if name == "selse":
                res = quantify(train, test, SelseConfig(seed=seed))
                est, degenerate = res.pi_hat, res.degenerate
            else:
                if ctx is None:
                    ctx = fit_context(train, seed)
                est = run_method(name, ctx, test).estimate
        except (EmptyClass, NotBinary, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("quantifier %s failed: %s", name, exc)
            est, degenerate = np.full(m, 1.0 / (m + 1)), True
        if not np.all(np.isfinite(est)):
            est, degenerate = np.full(m, 1.0 / (m + 1)), True
        out.append((name, np.asarray(est, dtype=float), degenerate, time.perf_counter() - t0 if timing else 0.0))
    return out


def _load_source(grid: ExperimentGrid):
    if grid.source == "gaussian":
        return GaussianMixtureModel.isotropic(np.asarray(grid.means, dtype=float))
    data, _ = load_csv(grid.source, grid.label_column)
    return data


def _cell(args) -> list[TrialResult]:
    grid, cells = args
    source = _load_source(grid)
    out = []
    for ti, pj, rep in cells:
        tau = grid.tau_values[ti]
        pi_star = grid.pi_star_values[pj]
        n_te = test_size(grid.n, tau)
        n_tr = grid.n - n_te
        key = (grid.seed, ti, pj, rep)
        if isinstance(source, GaussianMixtureModel):
            train, test, _ = synthetic(source, grid.pi_tr, pi_star, n_tr, n_te, key)
        else:
            train, test, _ = resample(source, grid.pi_tr, pi_star, n_tr, n_te, key)
        trial_seed = int(rng_for(*key).integers(2**31 - 1))
        for name, est, deg, secs in run_trial(train, test, grid.quantifiers, trial_seed, grid.timing):
            err = normalized_error(est, pi_star, tau, grid.n)
            out.append(TrialResult(name, float(tau), _pi_key(pi_star), rep, tuple(est.tolist()), err, secs, deg))
    return out


def grid_cells(grid: ExperimentGrid, taus: Iterable[int] | None = None) -> list[tuple[int, int, int]]:
    keep = set(range(len(grid.tau_values))) if taus is None else set(taus)
    return [(ti, pj, r) for ti in range(len(grid.tau_values)) if ti in keep
            for pj in range(len(grid.pi_star_values)) for r in range(grid.reps)]


def run_grid(grid: ExperimentGrid, jobs: int = 1, taus: Iterable[int] | None = None) -> list[TrialResult]:
    """All trials in (tau, pi_star, rep) order; ``taus`` restricts to tau indices."""
    cells = grid_cells(grid, taus)
    if jobs <= 1:
        results = []
        for ti in sorted({c[0] for c in cells}):
            for pj in range(len(grid.pi_star_values)):
                chunk = [c for c in cells if c[0] == ti and c[1] == pj]
                results.extend(_cell((grid, chunk)))
                log.info("done tau=%s pi_star=%s", grid.tau_values[ti], grid.pi_star_values[pj])
        return results
    chunks = [[c] for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = ex.map(_cell, [(grid, ch) for ch in chunks])
        return [r for part in parts for r in part]


def aggregate(results: Sequence[TrialResult]) -> list[dict]:
    """Mean normalized error per (quantifier, tau, pi_star) in first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.quantifier, r.tau, r.pi_star), []).append(r)
    return [
        {"quantifier": q, "tau": t, "pi_star": list(p), "mean_normalized_error": float(np.mean([r.normalized_error for r in rs])),
         "reps": len(rs), "degenerate": int(sum(r.degenerate for r in rs))}
        for (q, t, p), rs in groups.items()
    ]


def mean_by_tau(results: Sequence[TrialResult]) -> dict:
    """Grid-averaged normalized error per quantifier and tau."""
    out: dict = {}
    for r in results:
        out.setdefault(r.quantifier, {}).setdefault(repr(r.tau), []).append(r.normalized_error)
    return {q: {t: float(np.mean(v)) for t, v in d.items()} for q, d in out.items()}


def _fmt(x: float) -> str:
    return repr(float(x))


def results_csv(results: Sequence[TrialResult], m: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantifier", "tau", "pi_star", "rep"] + [f"estimate_{i}" for i in range(1, m + 1)]
               + ["normalized_error", "degenerate", "seconds"])
    for r in results:
        pi = _fmt(r.pi_star[0]) if len(r.pi_star) == 1 else ";".join(_fmt(v) for v in r.pi_star)
        w.writerow([r.quantifier, _fmt(r.tau), pi, r.rep] + [_fmt(v) for v in r.estimate]
                   + [_fmt(r.normalized_error), int(r.degenerate), _fmt(r.seconds)])
    return buf.getvalue()


def write_results(results: Sequence[TrialResult], grid: ExperimentGrid, csv_path, json_path=None) -> None:
    csv_path = Path(csv_path)
    csv_path.write_text(results_csv(results, grid.m), encoding="utf-8")
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    summary = {"grid": grid.record(), "cells": aggregate(results), "by_tau": mean_by_tau(results)}
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Correlation:
    values: np.ndarray
    constant: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def score_correlation(estimate, model: GaussianMixtureModel, gamma: SimplexLike, n_eval: int = 2000,
                      seed: int = 0) -> Correlation:
    """Pearson correlation per class between an estimated and the true score on draws from p_gamma.

    A constant estimate gives 0 with the ``constant`` flag set.
    """
    if n_eval < 10:
        raise ValueError("n_eval must be at least 10")
    rng = rng_for(seed, 3)
    labels = draw_labels(gamma, n_eval, rng)
    x = np.empty((n_eval, model.d))
    for y in range(model.m + 1):
        pos = np.nonzero(labels == y)[0]
        if pos.size:
            x[pos] = model.draw_class(y, pos.size, rng)
    est = np.asarray(estimate(x), dtype=float).reshape(n_eval, -1)
    true = true_score_matrix(model, gamma, x)
    vals = np.zeros(est.shape[1])
    const = np.zeros(est.shape[1], dtype=bool)
    for k in range(est.shape[1]):
        if np.ptp(est[:, k]) <= 1e-12 * max(1.0, np.abs(est[:, k]).max()) or np.ptp(true[:, k]) == 0:
            const[k] = True
            continue
        vals[k] = float(np.corrcoef(est[:, k], true[:, k])[0, 1])
    return Correlation(vals, const)


def load_csv(path, label_column: str) -> tuple[LabeledDataset, dict]:
    """Numeric features in column order; labels mapped to 0..m by first appearance."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(0, "", "empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MissingColumn(label_column)
        li = header.index(label_column)
        feat_cols = [i for i in range(len(header)) if i != li]
        rows, labels, mapping = [], [], {}
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(r, "", f"expected {len(header)} fields, got {len(row)}")
            vals = []
            for i in feat_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    raise NonNumericFeature(r, header[i], f"non-numeric value {row[i]!r}") from None
                if not math.isfinite(v):
                    raise ParseError(r, header[i], f"non-finite value {row[i]!r}")
                vals.append(v)
            lab = row[li].strip()
            mapping.setdefault(lab, len(mapping))
            labels.append(mapping[lab])
            rows.append(vals)
    if len(mapping) < 2:
        raise ParseError(0, label_column, "need at least two label values")
    x = np.asarray(rows, dtype=float).reshape(len(rows), len(feat_cols))
    return LabeledDataset(x, np.asarray(labels, dtype=int), len(mapping) - 1), mapping


def load_features_csv(path, drop: Sequence[str] = ()) -> UnlabeledDataset:
    """Unlabeled features from a CSV with header; columns in ``drop`` are ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(0, "", "empty file") from None
        cols = [i for i, h in enumerate(header) if h not in drop]
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(r, "", f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in cols])
            except ValueError:
                raise NonNumericFeature(r, "", "non-numeric feature value") from None
    return UnlabeledDataset(np.asarray(rows, dtype=float).reshape(len(rows), len(cols)))
