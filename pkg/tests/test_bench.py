import json
import math

import numpy as np
import pytest

from shiftquant.bench import (
    Correlation,
    ExperimentGrid,
    MissingColumn,
    NonNumericFeature,
    ParseError,
    aggregate,
    class_counts,
    load_csv,
    normalized_error,
    resample,
    results_csv,
    run_grid,
    score_correlation,
    synthetic,
    write_results,
)
from shiftquant.core import EmptyClass, LabeledDataset
from shiftquant.oracle import true_score_matrix


def test_normalized_error_examples():
    assert normalized_error([0.3], [0.3], 0.5, 500) == 0.0
    assert normalized_error([0.4], [0.3], 0.5, 500) == pytest.approx(math.sqrt(125) * 0.1)
    assert normalized_error([0.4], [0.3], 0.5, 500) == pytest.approx(1.1180, abs=1e-4)
    assert normalized_error([0.2], [0.3], 0.2, 500) == pytest.approx(0.8944, abs=1e-4)
    assert normalized_error([0.5], [0.5], 0.5, 10) == 0.0


def test_class_counts_largest_remainder():
    np.testing.assert_array_equal(class_counts([0.5], 10), [5, 5])
    np.testing.assert_array_equal(class_counts([0.3], 7), [5, 2])
    assert class_counts([1 / 3, 1 / 3], 10).sum() == 10


def _source():
    rng = np.random.default_rng(0)
    return LabeledDataset(rng.normal(size=(30, 2)), np.repeat([0, 1], 15), 1)


def test_resample_examples():
    train, test, hidden = resample(_source(), [0.5], [1.0], 10, 5, 3)
    np.testing.assert_array_equal(train.counts(), [5, 5])
    np.testing.assert_array_equal(hidden, 1)
    again = resample(_source(), [0.5], [1.0], 10, 5, 3)
    np.testing.assert_array_equal(train.features, again[0].features)
    np.testing.assert_array_equal(test.features, again[1].features)


def test_resample_draws_from_matching_class():
    src = _source()
    _, test, hidden = resample(src, [0.5], [0.4], 10, 50, 4)
    for row, y in zip(test.features, hidden):
        idx = np.nonzero((src.features == row).all(axis=1))[0]
        assert src.labels[idx[0]] == y


def test_resample_missing_class():
    src = LabeledDataset(np.zeros((3, 1)), np.zeros(3, dtype=int), 1)
    with pytest.raises(EmptyClass):
        resample(src, [0.5], [0.5], 4, 4, 0)


def test_synthetic_sizes(gauss):
    train, test, hidden = synthetic(gauss, [0.5], [0.2], 50, 30, (1, 2))
    np.testing.assert_array_equal(train.counts(), [25, 25])
    assert test.n == 30 and hidden.size == 30


def test_grid_validation():
    with pytest.raises(ValueError):
        ExperimentGrid(tau_values=(1.0,))
    with pytest.raises(ValueError):
        ExperimentGrid(quantifiers=("nope",))
    with pytest.raises(ValueError):
        ExperimentGrid(n=4, tau_values=(0.2,))


def test_run_grid_rows_and_determinism():
    grid = ExperimentGrid(n=60, tau_values=(0.5,), pi_star_values=(0.3,), reps=1, quantifiers=("cc", "acc"), seed=2)
    a = run_grid(grid)
    assert [r.quantifier for r in a] == ["cc", "acc"]
    assert all(r.normalized_error >= 0 and np.isfinite(r.normalized_error) for r in a)
    assert results_csv(a, 1) == results_csv(run_grid(grid), 1)


def test_run_grid_tau_filter_matches_full_grid():
    grid = ExperimentGrid(n=40, tau_values=(0.3, 0.6), pi_star_values=(0.4,), reps=2, quantifiers=("pcc",), seed=5)
    full = run_grid(grid)
    part = run_grid(grid, taus=[1])
    assert [r.estimate for r in full if r.tau == 0.6] == [r.estimate for r in part]


def test_quantifier_subset_sees_same_data():
    base = dict(n=60, tau_values=(0.5,), pi_star_values=(0.3,), reps=1, seed=3)
    both = run_grid(ExperimentGrid(quantifiers=("cc", "emq"), **base))
    one = run_grid(ExperimentGrid(quantifiers=("emq",), **base))
    assert both[1].estimate == one[0].estimate


def test_results_files(tmp_path):
    grid = ExperimentGrid(n=60, tau_values=(0.5,), pi_star_values=(0.3, 0.6), reps=2, quantifiers=("cc",), seed=1)
    res = run_grid(grid)
    write_results(res, grid, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "quantifier,tau,pi_star,rep,estimate_1,normalized_error,degenerate,seconds"
    assert len(lines) == 5
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["grid"]["seed"] == 1
    assert len(summary["cells"]) == 2
    assert aggregate(res)[0]["reps"] == 2


def test_score_correlation_conventions(gauss):
    g = [0.4]
    exact = score_correlation(lambda x: true_score_matrix(gauss, g, x), gauss, g, 500, 1)
    assert exact.values[0] == pytest.approx(1.0)
    neg = score_correlation(lambda x: -true_score_matrix(gauss, g, x), gauss, g, 500, 1)
    assert neg.values[0] == pytest.approx(-1.0)
    const = score_correlation(lambda x: np.full((x.shape[0], 1), 2.0), gauss, g, 500, 1)
    assert isinstance(const, Correlation)
    assert const.values[0] == 0.0 and const.constant[0]
    with pytest.raises(ValueError):
        score_correlation(lambda x: x, gauss, g, 5, 1)


def test_load_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x1,y,x2\n1.0,a,2\n3,b,4\n")
    data, mapping = load_csv(p, "y")
    np.testing.assert_array_equal(data.labels, [0, 1])
    np.testing.assert_array_equal(data.features, [[1, 2], [3, 4]])
    assert mapping == {"a": 0, "b": 1}
    assert load_csv(p, "y")[1] == mapping


def test_load_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n1,a\nfoo,b\n")
    with pytest.raises(NonNumericFeature) as err:
        load_csv(p, "y")
    assert err.value.row == 2
    assert isinstance(err.value, ParseError)
    with pytest.raises(MissingColumn):
        load_csv(p, "label")
    short = tmp_path / "short.csv"
    short.write_text("x,y\n1\n")
    with pytest.raises(ParseError):
        load_csv(short, "y")


def test_parallel_matches_serial():
    grid = ExperimentGrid(n=40, tau_values=(0.5,), pi_star_values=(0.3, 0.7), reps=2, quantifiers=("cc", "emq"), seed=4)
    assert results_csv(run_grid(grid, jobs=2), 1) == results_csv(run_grid(grid), 1)
