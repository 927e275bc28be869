"""Correction tests: node-wise subtraction, evaluation, interval report."""

import math
from dataclasses import replace

import numpy as np
import pytest

from reachgp.correct import (
    INTERVAL_Z,
    VALIDATION_CSV_HEADER,
    CorrectionReport,
    correct_series,
    evaluate_correction,
    prediction_interval_report,
)
from reachgp.game import ProblemSpec
from reachgp.gp import FitOptions, KernelSpec, build_model, fit, model_id
from reachgp.rollout import sample_errors
from reachgp.solver import SolverConfig, ValueSeries, solve_qvi

SEED = 1234


@pytest.fixture(scope="module")
def small_series(reference_grid):
    # coarse time storage keeps node-wise correction cheap
    cfg = SolverConfig(monotone_tube=True, store_every=40)
    return solve_qvi(ProblemSpec(), reference_grid, cfg)


@pytest.fixture(scope="module")
def small_samples(small_series):
    return sample_errors(small_series, 120, SEED)


@pytest.fixture(scope="module")
def small_model(small_samples):
    return fit(small_samples, "squared_exponential", FitOptions(restarts=2, seed=SEED))


def constant_model(inputs, c):
    # constant targets give beta = c exactly and zero kernel weights
    return build_model(
        inputs,
        np.full(inputs.shape[0], float(c)),
        KernelSpec("squared_exponential", 0.3, 0.01),
        noise_variance=1e-4,
    )


def test_zero_targets_leave_series_unchanged(small_series, small_samples):
    model = constant_model(small_samples.inputs(), 0.0)
    assert model.beta == 0.0
    corrected = correct_series(small_series, model)
    np.testing.assert_allclose(corrected.values, small_series.values, rtol=0.0, atol=1e-6)


def test_constant_prediction_shifts_every_node(small_series, small_samples):
    c = 0.037
    model = constant_model(small_samples.inputs(), c)
    corrected = correct_series(small_series, model)
    np.testing.assert_allclose(
        corrected.values, small_series.values - c, rtol=0.0, atol=1e-12
    )


def test_correction_is_linear_in_the_prediction(small_series, small_model):
    c = 0.5
    shifted = replace(small_model, beta=small_model.beta + c)
    a = correct_series(small_series, small_model)
    b = correct_series(small_series, shifted)
    np.testing.assert_allclose(a.values - b.values, c, rtol=0.0, atol=1e-12)


def test_correction_preserves_grid_times_spec(small_series, small_model):
    corrected = correct_series(small_series, small_model)
    assert corrected.grid is small_series.grid
    assert np.array_equal(corrected.times, small_series.times)
    assert corrected.spec == small_series.spec
    assert corrected.label == "corrected"
    assert corrected.meta["model_id"] == model_id(small_model)
    assert "obstacle_violations" in corrected.meta
    # the input series is untouched
    assert small_series.label == "computed"
    assert "model_id" not in small_series.meta


def test_correction_rejects_mismatched_spec_provenance(small_series, small_model):
    wrong = ProblemSpec(v_e=1.5).to_dict()
    bad = replace(small_model, provenance={"spec": wrong})
    with pytest.raises(ValueError):
        correct_series(small_series, bad)
    good = replace(small_model, provenance={"spec": small_series.spec.to_dict()})
    corrected = correct_series(small_series, good)
    assert corrected.label == "corrected"


def test_evaluate_identical_series_gives_equal_columns(small_series):
    corrected = ValueSeries(
        grid=small_series.grid,
        times=small_series.times.copy(),
        values=small_series.values.copy(),
        spec=small_series.spec,
        label="corrected",
        meta={"model_id": "copy"},
    )
    report = evaluate_correction(small_series, corrected, n=40, seed=SEED)
    assert report.rmse_corrected == report.rmse_uncorrected
    assert report.flipped_membership_count == 0
    assert report.n_validation == 40
    assert report.model_id == "copy"
    assert report.seed == SEED


def test_evaluate_uncorrected_column_matches_sampling_pipeline(small_series, small_model):
    corrected = correct_series(small_series, small_model)
    report = evaluate_correction(small_series, corrected, n=30, seed=777)
    direct = sample_errors(small_series, 30, 777)
    assert report.rmse_uncorrected == direct.rms_error()
    assert report.resampled_uncorrected == direct.resampled
    assert report.rmse_corrected >= 0.0


def test_correction_report_json_roundtrip():
    report = CorrectionReport(
        rmse_uncorrected=0.0481,
        rmse_corrected=0.016,
        n_validation=1000,
        model_id="abc123",
        flipped_membership_count=9,
        resampled_uncorrected=12,
        resampled_corrected=15,
        seed=99,
    )
    text = report.to_json()
    assert text.endswith("\n")
    assert CorrectionReport.from_json(text) == report


def test_validation_csv_header_field_order():
    assert VALIDATION_CSV_HEADER == [
        "x1", "x2", "x3", "t", "v_tilde", "v_rollout", "v_hat", "std", "in_interval",
    ]


def test_prediction_interval_report_rows(small_series, small_model):
    n = 50
    rows, coverage = prediction_interval_report(small_series, small_model, n, seed=4321)
    assert len(rows) == n
    assert coverage == pytest.approx(sum(r["in_interval"] for r in rows) / n)
    assert 0.0 <= coverage <= 1.0
    for row in rows:
        assert list(row.keys()) == VALIDATION_CSV_HEADER
        assert row["std"] >= 0.0
        assert row["in_interval"] in (0, 1)
        half = INTERVAL_Z * math.sqrt(row["std"] ** 2 + small_model.noise_variance)
        assert row["in_interval"] == int(abs(row["v_rollout"] - row["v_hat"]) <= half)
        assert row["v_hat"] == pytest.approx(row["v_tilde"], abs=1.0)


def test_prediction_interval_synthetic_coverage(small_series, small_samples):
    # a model fitted on matching targets should cover most fresh draws
    model = fit(small_samples, "rational_quadratic", FitOptions(restarts=2, seed=SEED))
    _, coverage = prediction_interval_report(small_series, model, 60, seed=2222)
    assert coverage >= 0.8
