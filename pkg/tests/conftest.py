"""Shared fixtures: the reference tube solve and its rollout error samples.

The heavy session fixtures mirror the CLI pipeline on the default
configuration (monotone tube semantics, seed 7) so unit and acceptance
tests exercise the exact artifacts a pipeline run would produce.
"""

import numpy as np
import pytest

from reachgp.config import STREAM_TRAIN, derive_seed
from reachgp.game import ProblemSpec
from reachgp.grid import build_grid
from reachgp.rollout import sample_errors
from reachgp.solver import SolverConfig, solve_qvi

CONFIG_SEED = 7


@pytest.fixture(scope="session")
def reference_grid():
    return build_grid([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0], [21, 21, 21], [False, False, True])


@pytest.fixture(scope="session")
def reference_series(reference_grid):
    """Tube solve on the reference configuration."""
    return solve_qvi(ProblemSpec(), reference_grid, SolverConfig(monotone_tube=True))


@pytest.fixture(scope="session")
def bare_series(reference_grid):
    """Same solve without the monotone projection."""
    return solve_qvi(ProblemSpec(), reference_grid, SolverConfig(monotone_tube=False))


@pytest.fixture(scope="session")
def train_seed():
    return derive_seed(CONFIG_SEED, STREAM_TRAIN)


@pytest.fixture(scope="session")
def reference_samples(reference_series, train_seed):
    """1000 rollout error samples, the pipeline's training draw."""
    return sample_errors(reference_series, 1000, train_seed)
