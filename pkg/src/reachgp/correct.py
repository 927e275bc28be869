"""Regression-corrected value functions and their evaluation.

The corrected series subtracts the model's predicted error from every
stored node at every stored time. No obstacle projection is re-applied
afterwards: the correction is a statistical estimate, and clipping it would
hide miscalibration, so nodes pushed below the barrier are only counted.
Policies derived from the corrected series use its own gradient fields.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from .gp import GpModel, model_id, predict_batch, predict_mean
from .rollout import DEFAULT_DT, sample_errors
from .solver import ValueSeries, value_at

__all__ = [
    "CorrectionReport",
    "correct_series",
    "evaluate_correction",
    "prediction_interval_report",
    "INTERVAL_Z",
]

logger = logging.getLogger(__name__)

# two-sided 95% normal quantile used for prediction intervals
INTERVAL_Z = 1.96


@dataclass
class CorrectionReport:
    """Validation-set comparison of a series against its corrected version."""

    rmse_uncorrected: float
    rmse_corrected: float
    n_validation: int
    model_id: str
    flipped_membership_count: int
    resampled_uncorrected: int = 0
    resampled_corrected: int = 0
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "CorrectionReport":
        return CorrectionReport(**json.loads(text))


def _grid_points_at(series: ValueSeries, t: float) -> np.ndarray:
    coords = series.grid.meshgrid()
    cols = [c.reshape(-1) for c in coords]
    cols.append(np.full(cols[0].shape, t))
    return np.column_stack(cols)


def correct_series(series: ValueSeries, model: GpModel) -> ValueSeries:
    """Subtract the predicted error field from every stored slice.

    The model must have been fitted against the same game parameters when
    its provenance records them. The count of nodes pushed below the avoid
    barrier is logged and recorded in the result's metadata.
    """
    prov_spec = model.provenance.get("spec")
    if prov_spec is not None and prov_spec != series.spec.to_dict():
        raise ValueError(
            f"model was fitted for {prov_spec}, series solved with {series.spec.to_dict()}"
        )
    corrected = np.empty_like(series.values)
    for k, t in enumerate(series.times):
        eps_hat = predict_mean(model, _grid_points_at(series, float(t)))
        corrected[k] = series.values[k] - eps_hat.reshape(series.grid.shape)

    x1, x2, _ = series.grid.meshgrid()
    barrier = np.hypot(x1, x2) - series.spec.r2
    violations = int(np.sum(corrected < barrier[None, :, :, :] - 1e-12))
    if violations:
        logger.info("correction pushed %d node values below the avoid barrier", violations)
    meta = dict(series.meta)
    meta.update({"model_id": model_id(model), "obstacle_violations": violations})
    return ValueSeries(
        grid=series.grid,
        times=series.times.copy(),
        values=corrected,
        spec=series.spec,
        label="corrected",
        meta=meta,
    )


def evaluate_correction(
    series: ValueSeries,
    corrected: ValueSeries,
    n: int,
    seed: int,
    dt: float = DEFAULT_DT,
) -> CorrectionReport:
    """Fresh-draw comparison of both series against their own rollouts.

    Each series is scored by the same sampling pipeline: value interpolation
    minus the pathwise outcome of rollouts under that series' own policies.
    Membership flips are counted on the uncorrected draw's points.
    """
    base = sample_errors(series, n, seed, dt=dt)
    corr = sample_errors(corrected, n, seed, dt=dt)
    flips = sum(
        (s.v_tilde <= 0.0) != (value_at(corrected, s.state, s.t) <= 0.0) for s in base
    )
    return CorrectionReport(
        rmse_uncorrected=base.rms_error(),
        rmse_corrected=corr.rms_error(),
        n_validation=n,
        model_id=corrected.meta.get("model_id", model_id_of(corrected)),
        flipped_membership_count=int(flips),
        resampled_uncorrected=base.resampled,
        resampled_corrected=corr.resampled,
        seed=seed,
    )


def model_id_of(series: ValueSeries) -> str:
    return str(series.meta.get("model_id", "unknown"))


VALIDATION_CSV_HEADER = [
    "x1", "x2", "x3", "t", "v_tilde", "v_rollout", "v_hat", "std", "in_interval",
]


def prediction_interval_report(
    series: ValueSeries,
    model: GpModel,
    n: int,
    seed: int,
    dt: float = DEFAULT_DT,
) -> tuple[list[dict], float]:
    """Fresh rollouts scored against 95% prediction intervals.

    Each row reports the interpolated value, the rollout outcome, the
    corrected value estimate, the predictive std, and whether the rollout
    outcome fell inside mean +/- 1.96 sqrt(std^2 + noise_variance).
    Returns the rows and the empirical coverage.
    """
    drawn = sample_errors(series, n, seed, dt=dt)
    points = drawn.inputs()
    means, stds = predict_batch(model, points)
    rows = []
    hits = 0
    for s, eps_hat, std in zip(drawn, means, stds):
        v_hat = s.v_tilde - float(eps_hat)
        half = INTERVAL_Z * math.sqrt(float(std) ** 2 + model.noise_variance)
        inside = abs(s.v_rollout - v_hat) <= half
        hits += inside
        rows.append(
            {
                "x1": s.state.x1,
                "x2": s.state.x2,
                "x3": s.state.x3,
                "t": s.t,
                "v_tilde": s.v_tilde,
                "v_rollout": s.v_rollout,
                "v_hat": v_hat,
                "std": float(std),
                "in_interval": int(inside),
            }
        )
    return rows, hits / n
