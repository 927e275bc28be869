"""Pursuit-evasion game in evader-fixed relative coordinates.

The state is the pursuer position relative to the evader, ``(x1, x2)``, plus
the relative heading ``x3`` stored as a fraction of a full turn, so the
natural domain is ``x3 in [0, 1)``. The evader controls its turn rate ``u``,
the pursuer the disturbance ``d``; both are rate-bounded. Capture is the
reach target (disc of radius ``r1``), collision the avoid region boundary
(disc of radius ``r2``); ``reach_distance`` and ``avoid_distance`` are the
corresponding signed distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .grid import Costate, Grid

__all__ = [
    "TWO_PI",
    "State",
    "ProblemSpec",
    "flow",
    "reach_distance",
    "avoid_distance",
    "hamiltonian",
    "hamiltonian_arrays",
    "optimal_inputs",
    "dissipation_bounds",
]

TWO_PI = 2.0 * math.pi

_INPUT_TOL = 1e-12


class State(NamedTuple):
    """Relative planar offset and heading fraction."""

    x1: float
    x2: float
    x3: float


@dataclass(frozen=True)
class ProblemSpec:
    """Game parameters.

    ``v_e``/``v_p`` are the evader and pursuer speeds, ``u_max``/``d_max``
    the turn-rate bounds, ``r1 < r2`` the capture and collision radii, and
    ``horizon`` the (non-negative) lookback time.
    """

    v_e: float = 0.75
    v_p: float = 0.75
    u_max: float = 3.0
    d_max: float = 3.0
    r1: float = 0.25
    r2: float = 1.0
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.v_e <= 0 or self.v_p <= 0:
            raise ValueError(f"speeds must be positive, got v_e={self.v_e}, v_p={self.v_p}")
        if self.u_max < 0 or self.d_max < 0:
            raise ValueError(
                f"turn-rate bounds must be non-negative, got u_max={self.u_max}, d_max={self.d_max}"
            )
        if self.r1 <= 0 or self.r2 <= 0 or self.r1 >= self.r2:
            raise ValueError(f"radii must satisfy 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}")

    def with_speeds(self, v_e: float, v_p: float) -> "ProblemSpec":
        return replace(self, v_e=v_e, v_p=v_p)

    def to_dict(self) -> dict:
        return {
            "v_e": self.v_e,
            "v_p": self.v_p,
            "u_max": self.u_max,
            "d_max": self.d_max,
            "r1": self.r1,
            "r2": self.r2,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(d: dict) -> "ProblemSpec":
        return ProblemSpec(**d)


def flow(state: State, u: float, d: float, spec: ProblemSpec) -> tuple[float, float, float]:
    """Relative dynamics under evader input ``u`` and pursuer input ``d``."""
    if abs(u) > spec.u_max + _INPUT_TOL:
        raise ValueError(f"|u|={abs(u)} exceeds bound {spec.u_max}")
    if abs(d) > spec.d_max + _INPUT_TOL:
        raise ValueError(f"|d|={abs(d)} exceeds bound {spec.d_max}")
    x1, x2, x3 = state
    heading = TWO_PI * x3
    dx1 = -spec.v_e + spec.v_p * math.cos(heading) + d * x2
    dx2 = spec.v_p * math.sin(heading) - d * x1
    dx3 = (u - d) / TWO_PI
    return (dx1, dx2, dx3)


def reach_distance(state: State, spec: ProblemSpec) -> float:
    """Signed distance to the capture disc (negative inside)."""
    return math.hypot(state[0], state[1]) - spec.r1


def avoid_distance(state: State, spec: ProblemSpec) -> float:
    """Signed distance to the collision disc (negative inside, to be avoided)."""
    return math.hypot(state[0], state[1]) - spec.r2


def hamiltonian_arrays(
    x1, x2, x3, p1, p2, p3, spec: ProblemSpec, printed_form: bool = False
):
    """Upper-value Hamiltonian, elementwise over array arguments.

    The evader maximises, the pursuer minimises. ``printed_form`` drops the
    absolute value on the evader turn term (a sign-restricted variant kept
    selectable for comparison; it is not used by the solver).
    """
    drift = p1 * (-spec.v_e + spec.v_p * np.cos(TWO_PI * x3)) + p2 * (
        spec.v_p * np.sin(TWO_PI * x3)
    )
    rot = p1 * x2 - p2 * x1 - p3 / TWO_PI
    turn = p3 / TWO_PI if printed_form else np.abs(p3) / TWO_PI
    return drift - spec.d_max * np.abs(rot) + spec.u_max * turn


def hamiltonian(
    state: State, costate: Costate, spec: ProblemSpec, printed_form: bool = False
) -> float:
    """Scalar Hamiltonian ``max_u min_d  p . f(x, u, d)``."""
    x1, x2, x3 = state
    p1, p2, p3 = costate
    return float(hamiltonian_arrays(x1, x2, x3, p1, p2, p3, spec, printed_form))


def optimal_inputs(state: State, costate: Costate, spec: ProblemSpec) -> tuple[float, float]:
    """Saddle-point inputs for the Hamiltonian; sign ties resolve to +1."""
    x1, x2, x3 = state
    p1, p2, p3 = costate
    u = spec.u_max if p3 >= 0 else -spec.u_max
    rot = p1 * x2 - p2 * x1 - p3 / TWO_PI
    d = -spec.d_max if rot >= 0 else spec.d_max
    return (u, d)


def dissipation_bounds(grid: Grid, spec: ProblemSpec) -> tuple[float, float, float]:
    """Per-dimension bounds on |dH/dp| over the grid domain."""
    if grid.dims != 3:
        raise ValueError(f"game runs on a 3-d grid, got {grid.dims} dimensions")
    max_x1 = float(np.max(np.abs(grid.axis_coords(0))))
    max_x2 = float(np.max(np.abs(grid.axis_coords(1))))
    a1 = spec.v_e + spec.v_p + spec.d_max * max_x2
    a2 = spec.v_p + spec.d_max * max_x1
    a3 = (spec.u_max + spec.d_max) / TWO_PI
    return (a1, a2, a3)
