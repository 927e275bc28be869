"""Level-set solver for the reach-avoid quasi-variational inequality.

The value function obeys, backwards in time from a terminal slice at t = 0,

    max( h(x) - V(x, t),  V_t + H(x, grad V) ) = 0,
    V(x, 0) = max( l(x), h(x) ),

so a state belongs to the backward reachable tube exactly when V <= 0.
Spatial derivatives are third-order ENO one-sided differences combined by a
Lax-Friedrichs flux, and time integration is the three-stage TVD
Runge-Kutta scheme. One step runs from t to t - dt with dt > 0:

    candidate = V + dt * ( H(x, (p- + p+)/2) + sum_i alpha_i (p_i+ - p_i-)/2 )

followed by node-wise projection onto V >= h. The dissipation enters with a
plus sign here because stepping backwards flips the orientation of the
upwind flux; the analytic advection test pins this down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .game import (
    TWO_PI,
    ProblemSpec,
    State,
    dissipation_bounds,
    hamiltonian,
)
from .grid import Costate, Grid, GridBoundsError, ScalarField, interpolate, _locate

__all__ = [
    "SolverConfig",
    "ValueSeries",
    "QviProblem",
    "game_problem",
    "eno3_derivatives",
    "lax_friedrichs",
    "step",
    "solve_qvi",
    "value_at",
    "brt_contains",
]

GHOST = 3

_TIME_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs for the tube solve.

    ``cfl`` scales the stable step bound, ``store_every`` decimates the
    stored slices (the terminal and final ones are always kept), and
    ``monotone_tube`` additionally enforces node-wise monotonicity of the
    slices in backward time.
    """

    cfl: float = 0.5
    eno_order: int = 3
    monotone_tube: bool = False
    store_every: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.eno_order != 3:
            raise ValueError(f"only third-order ENO is implemented, got {self.eno_order}")
        if self.store_every < 1:
            raise ValueError(f"store_every must be a positive integer, got {self.store_every}")


@dataclass(eq=False)
class ValueSeries:
    """Stored value slices at increasing times ending at 0.

    ``values`` has shape ``(len(times), *grid.shape)``; slice k belongs to
    ``times[k]``. ``label`` distinguishes solver output ("computed") from a
    regression-corrected series ("corrected").
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    spec: ProblemSpec
    label: str = "computed"
    meta: dict = field(default_factory=dict)
    gradient_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("times must be a non-empty 1-d array")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if abs(self.times[-1]) > _TIME_TOL:
            raise ValueError(f"last stored time must be 0, got {self.times[-1]}")
        if self.values.shape != (self.times.size, *self.grid.shape):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{(self.times.size, *self.grid.shape)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value slices must be finite")

    @property
    def n_slices(self) -> int:
        return int(self.times.size)

    def slice_field(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[k].reshape(-1))


@dataclass
class QviProblem:
    """A Hamilton-Jacobi problem prepared for grid stepping.

    ``ham`` maps a tuple of costate component arrays (grid-shaped) to the
    Hamiltonian on the nodes; ``alphas`` bound |dH/dp| per dimension;
    ``obstacle`` is the node-wise lower barrier or None.
    """

    grid: Grid
    ham: Callable[[tuple[np.ndarray, ...]], np.ndarray]
    alphas: tuple[float, ...]
    obstacle: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.alphas) != self.grid.dims:
            raise ValueError(
                f"{len(self.alphas)} dissipation bounds for {self.grid.dims} dimensions"
            )
        if any(a < 0 for a in self.alphas):
            raise ValueError(f"dissipation bounds must be non-negative, got {self.alphas}")
        if self.obstacle is not None:
            self.obstacle = np.asarray(self.obstacle, dtype=float).reshape(self.grid.shape)

    @property
    def cfl_denominator(self) -> float:
        return float(sum(a / dx for a, dx in zip(self.alphas, self.grid.spacing)))


def game_problem(spec: ProblemSpec, grid: Grid) -> QviProblem:
    """Bundle the pursuit-evasion game on a grid for the stepper."""
    x1, x2, x3 = grid.meshgrid()
    # cos/sin of the heading never change across steps; bake them in
    heading = TWO_PI * x3
    a1 = -spec.v_e + spec.v_p * np.cos(heading)
    a2 = spec.v_p * np.sin(heading)
    scale = spec.u_max / TWO_PI

    def ham(p: tuple[np.ndarray, ...]) -> np.ndarray:
        p1, p2, p3 = p
        rot = p1 * x2 - p2 * x1 - p3 / TWO_PI
        return p1 * a1 + p2 * a2 - spec.d_max * np.abs(rot) + scale * np.abs(p3)

    h = np.hypot(x1, x2) - spec.r2
    return QviProblem(grid=grid, ham=ham, alphas=dissipation_bounds(grid, spec), obstacle=h)


def _extend(v: np.ndarray, periodic: bool) -> np.ndarray:
    """Add GHOST layers along axis 0: wrapped copies or linear extrapolation."""
    if periodic:
        return np.concatenate([v[-GHOST:], v, v[:GHOST]], axis=0)
    steps = np.arange(GHOST, 0, -1).reshape((-1,) + (1,) * (v.ndim - 1))
    left = v[0] - steps * (v[1] - v[0])
    right = v[-1] + steps[::-1] * (v[-1] - v[-2])
    return np.concatenate([left, v, right], axis=0)


def _eno3_axis(v: np.ndarray, dx: float, periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    """Left- and right-biased third-order ENO derivatives along axis 0."""
    m = v.shape[0]
    ext = _extend(v, periodic)
    d1 = (ext[1:] - ext[:-1]) / dx  # d1[j]   = first difference at j+1/2
    d2 = (d1[1:] - d1[:-1]) / (2.0 * dx)  # d2[j]   = second difference at node j+1
    d3 = (d2[1:] - d2[:-1]) / (3.0 * dx)  # d3[j]   = third difference at j+3/2
    dx2 = dx * dx

    # Left-biased stencil rooted one node back (extended index e = i + GHOST).
    a = d2[1 : m + 1]
    b = d2[2 : m + 2]
    use_a = np.abs(a) <= np.abs(b)
    c1a, c2a = d3[0:m], d3[1 : m + 1]
    ca = np.where(np.abs(c1a) <= np.abs(c2a), c1a, c2a)
    c1b, c2b = d3[1 : m + 1], d3[2 : m + 2]
    cb = np.where(np.abs(c1b) <= np.abs(c2b), c1b, c2b)
    d_minus = (
        d1[2 : m + 2]
        + np.where(use_a, a, b) * dx
        + np.where(use_a, 2.0 * ca, -cb) * dx2
    )

    # Right-biased stencil rooted at the node itself.
    a = d2[2 : m + 2]
    b = d2[3 : m + 3]
    use_a = np.abs(a) <= np.abs(b)
    c1a, c2a = d3[1 : m + 1], d3[2 : m + 2]
    ca = np.where(np.abs(c1a) <= np.abs(c2a), c1a, c2a)
    c1b, c2b = d3[2 : m + 2], d3[3 : m + 3]
    cb = np.where(np.abs(c1b) <= np.abs(c2b), c1b, c2b)
    d_plus = (
        d1[3 : m + 3]
        - np.where(use_a, a, b) * dx
        + np.where(use_a, -ca, 2.0 * cb) * dx2
    )
    return d_minus, d_plus


def eno3_derivatives(field: ScalarField, dim: int) -> tuple[ScalarField, ScalarField]:
    """One-sided ENO3 derivative fields along ``dim`` (left, right biased)."""
    grid = field.grid
    if not 0 <= dim < grid.dims:
        raise ValueError(f"dimension {dim} out of range for a {grid.dims}-d grid")
    v = np.moveaxis(field.array, dim, 0)
    dm, dp = _eno3_axis(v, float(grid.spacing[dim]), bool(grid.periodic[dim]))
    back = lambda w: ScalarField(grid, np.moveaxis(w, 0, dim).reshape(-1))
    return back(dm), back(dp)


def lax_friedrichs(
    state: State,
    p_minus: Costate,
    p_plus: Costate,
    alphas: Sequence[float],
    spec: ProblemSpec,
) -> float:
    """Monotone numerical Hamiltonian at one node.

    Central Hamiltonian minus the standard dissipation; valid whenever each
    ``alphas[i]`` dominates |dH/dp_i| over the domain.
    """
    mid = Costate(*((pm + pp) / 2.0 for pm, pp in zip(p_minus, p_plus)))
    diss = sum(a * (pp - pm) / 2.0 for a, pm, pp in zip(alphas, p_minus, p_plus))
    return hamiltonian(state, mid, spec) - float(diss)


def _backward_rate(problem: QviProblem, v: np.ndarray) -> np.ndarray:
    """dV/d(backward time): central Hamiltonian plus upwinding dissipation."""
    grid = problem.grid
    mids = []
    diss = np.zeros_like(v)
    for d in range(grid.dims):
        w = np.moveaxis(v, d, 0)
        dm, dp = _eno3_axis(w, float(grid.spacing[d]), bool(grid.periodic[d]))
        dm = np.moveaxis(dm, 0, d)
        dp = np.moveaxis(dp, 0, d)
        mids.append((dm + dp) / 2.0)
        diss += problem.alphas[d] * (dp - dm) / 2.0
    return problem.ham(tuple(mids)) + diss


def step(
    problem: QviProblem,
    values: np.ndarray,
    dt: float,
    config: SolverConfig = SolverConfig(),
) -> np.ndarray:
    """Advance one TVD-RK3 step from t to t - dt and project onto V >= h."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    denom = problem.cfl_denominator
    if denom > 0.0 and dt > config.cfl / denom * (1.0 + 1e-9):
        raise ValueError(
            f"dt={dt} violates the CFL bound {config.cfl / denom:.6g} "
            f"(cfl={config.cfl})"
        )
    v = np.asarray(values, dtype=float).reshape(problem.grid.shape)
    v1 = v + dt * _backward_rate(problem, v)
    v2 = 0.75 * v + 0.25 * (v1 + dt * _backward_rate(problem, v1))
    out = v / 3.0 + (2.0 / 3.0) * (v2 + dt * _backward_rate(problem, v2))
    if problem.obstacle is not None:
        np.maximum(out, problem.obstacle, out=out)
    if config.monotone_tube:
        np.minimum(out, v, out=out)
    if not np.all(np.isfinite(out)):
        raise RuntimeError("value slice became non-finite; check dissipation bounds")
    return out


def solve_qvi(spec: ProblemSpec, grid: Grid, config: SolverConfig = SolverConfig()) -> ValueSeries:
    """Solve the tube equation over ``[-horizon, 0]`` and collect slices."""
    problem = game_problem(spec, grid)
    x1, x2, x3 = grid.meshgrid()
    l = np.hypot(x1, x2) - spec.r1
    terminal = np.maximum(l, problem.obstacle)

    if spec.horizon == 0.0:
        return ValueSeries(grid, np.array([0.0]), terminal[None], spec)

    limit = config.cfl / problem.cfl_denominator
    n_steps = max(1, int(math.ceil(spec.horizon / limit - 1e-12)))
    dt = spec.horizon / n_steps

    stored = [(0.0, terminal.copy())]
    v = terminal
    for k in range(1, n_steps + 1):
        v = step(problem, v, dt, config)
        if k % config.store_every == 0 or k == n_steps:
            stored.append((-k * dt, v.copy()))
    stored.reverse()
    times = np.array([t for t, _ in stored])
    values = np.stack([s for _, s in stored])
    return ValueSeries(grid, times, values, spec, meta={"n_steps": n_steps, "dt": dt})


def _time_bracket(times: np.ndarray, t: float) -> tuple[int, int, float]:
    """Bracketing slice indices and weight for a query time."""
    t0, t1 = float(times[0]), float(times[-1])
    tol = _TIME_TOL * max(1.0, abs(t0))
    if t < t0 - tol or t > t1 + tol:
        raise ValueError(f"time {t} outside stored range [{t0}, {t1}]")
    t = min(max(t, t0), t1)
    j = int(np.searchsorted(times, t))
    if j < times.size and times[j] == t:
        return j, j, 0.0
    lo, hi = j - 1, j
    w = (t - times[lo]) / (times[hi] - times[lo])
    return lo, hi, float(w)


def value_at(series: ValueSeries, state: State | Sequence[float], t: float) -> float:
    """Space-time multilinear interpolation of the stored value function."""
    point = series.grid.wrap(tuple(state))
    lo, hi, w = _time_bracket(series.times, t)
    v_lo = interpolate(series.slice_field(lo), point)
    if hi == lo:
        return v_lo
    v_hi = interpolate(series.slice_field(hi), point)
    return (1.0 - w) * v_lo + w * v_hi


def brt_contains(series: ValueSeries, state: State | Sequence[float], t: float) -> bool:
    """Tube membership: the interpolated value is non-positive."""
    return value_at(series, state, t) <= 0.0
