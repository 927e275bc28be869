"""Reach-avoid tube computation with rollout-based GP error correction.

The package solves a pursuit-evasion reach-avoid game on a grid, measures
the gap between the grid solution and closed-loop rollout outcomes, fits an
exact Gaussian process to that gap, and uses the corrected value function
inside a safety-switching controller.
"""

__version__ = "0.1.0"

from .config import RunConfig, default_config_dict, load_config, parse_config
from .correct import CorrectionReport, correct_series, evaluate_correction
from .game import ProblemSpec, State, flow, hamiltonian, optimal_inputs
from .gp import GpModel, KernelSpec, cross_validate, fit, predict
from .grid import Grid, ScalarField, build_grid, interpolate
from .hybrid import SwitchConfig, select
from .rollout import pathwise_value, sample_errors, simulate
from .solver import SolverConfig, ValueSeries, brt_contains, solve_qvi, value_at

__all__ = [
    "__version__",
    "RunConfig",
    "default_config_dict",
    "load_config",
    "parse_config",
    "CorrectionReport",
    "correct_series",
    "evaluate_correction",
    "ProblemSpec",
    "State",
    "flow",
    "hamiltonian",
    "optimal_inputs",
    "GpModel",
    "KernelSpec",
    "cross_validate",
    "fit",
    "predict",
    "Grid",
    "ScalarField",
    "build_grid",
    "interpolate",
    "SwitchConfig",
    "select",
    "pathwise_value",
    "sample_errors",
    "simulate",
    "SolverConfig",
    "ValueSeries",
    "brt_contains",
    "solve_qvi",
    "value_at",
]
