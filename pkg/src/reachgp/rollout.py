"""Closed-loop rollouts of value-derived policies and error sampling.

Feedback inputs come from the stored value function: the costate is
interpolated (space-time multilinear) from cached per-slice gradient fields
and pushed through the saddle-point input map. Trajectories integrate the
game dynamics with classical RK4 under zero-order-hold inputs. The pathwise
reach-avoid outcome of a trajectory is compared against the interpolated
value to produce one numerical-error observation per start point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .game import ProblemSpec, State, avoid_distance, flow, optimal_inputs, reach_distance
from .grid import Costate, GridBoundsError, _locate, gradient_field
from .solver import ValueSeries, _time_bracket, value_at

__all__ = [
    "COMPLETED",
    "LEFT_DOMAIN",
    "Trajectory",
    "ErrorSample",
    "SampleSet",
    "feedback_inputs",
    "simulate",
    "pathwise_value",
    "sample_errors",
    "write_samples_csv",
    "read_samples_csv",
    "SAMPLES_CSV_HEADER",
]

COMPLETED = "completed"
LEFT_DOMAIN = "left_domain"

SAMPLES_CSV_HEADER = ["x1", "x2", "x3", "t", "v_tilde", "v_rollout", "eps_tilde"]

DEFAULT_DT = 0.01

_RESAMPLE_BUDGET = 100


@dataclass
class Trajectory:
    """A closed-loop rollout from ``start_time`` to 0 (or an early exit).

    ``states`` holds one entry per step boundary; ``controls`` and
    ``disturbances`` hold the input applied over each step, so their length
    is ``len(states) - 1``.
    """

    start_time: float
    dt: float
    states: list[State]
    controls: list[float]
    disturbances: list[float]
    status: str

    def times(self) -> list[float]:
        out = [self.start_time + k * self.dt for k in range(len(self.states))]
        if self.status == COMPLETED and out:
            out[-1] = 0.0
        return out


@dataclass(frozen=True)
class ErrorSample:
    """One observation of solver error at a sampled state and time."""

    state: State
    t: float
    v_tilde: float
    v_rollout: float
    eps_tilde: float

    @property
    def input_row(self) -> tuple[float, float, float, float]:
        return (*self.state, self.t)


@dataclass
class SampleSet:
    """Error samples plus bookkeeping from the rejection loop."""

    samples: list[ErrorSample]
    resampled: int
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def inputs(self) -> np.ndarray:
        return np.array([s.input_row for s in self.samples])

    def targets(self) -> np.ndarray:
        return np.array([s.eps_tilde for s in self.samples])

    def rms_error(self) -> float:
        e = self.targets()
        return float(np.sqrt(np.mean(e * e)))


def _slice_gradients(series: ValueSeries, k: int) -> tuple[np.ndarray, ...]:
    cached = series.gradient_cache.get(k)
    if cached is None:
        grads = gradient_field(series.slice_field(k))
        cached = tuple(g.values for g in grads)
        series.gradient_cache[k] = cached
    return cached


def _interp_flat(flat: np.ndarray, loc, n2: int, n3: int) -> float:
    (i0, i1, wi), (j0, j1, wj), (k0, k1, wk) = loc
    s1 = n2 * n3
    a, b = i0 * s1, i1 * s1
    aj0, aj1 = a + j0 * n3, a + j1 * n3
    bj0, bj1 = b + j0 * n3, b + j1 * n3
    c00 = flat[aj0 + k0] * (1.0 - wk) + flat[aj0 + k1] * wk
    c01 = flat[aj1 + k0] * (1.0 - wk) + flat[aj1 + k1] * wk
    c10 = flat[bj0 + k0] * (1.0 - wk) + flat[bj0 + k1] * wk
    c11 = flat[bj1 + k0] * (1.0 - wk) + flat[bj1 + k1] * wk
    return float(
        (c00 * (1.0 - wj) + c01 * wj) * (1.0 - wi)
        + (c10 * (1.0 - wj) + c11 * wj) * wi
    )


def _costate_at(series: ValueSeries, point: tuple[float, ...], t: float) -> Costate:
    lo, hi, w = _time_bracket(series.times, t)
    loc = _locate(series.grid, point, clamp=False)
    n2, n3 = int(series.grid.counts[1]), int(series.grid.counts[2])
    g_lo = _slice_gradients(series, lo)
    if hi == lo:
        return Costate(*(_interp_flat(g, loc, n2, n3) for g in g_lo))
    g_hi = _slice_gradients(series, hi)
    comps = []
    for a, b in zip(g_lo, g_hi):
        comps.append((1.0 - w) * _interp_flat(a, loc, n2, n3) + w * _interp_flat(b, loc, n2, n3))
    return Costate(*comps)


def feedback_inputs(series: ValueSeries, state: State | Sequence[float], t: float) -> tuple[float, float]:
    """Saddle-point inputs read off the stored value function at (state, t)."""
    point = series.grid.wrap(tuple(state))
    p = _costate_at(series, point, t)
    return optimal_inputs(State(*point), p, series.spec)


def simulate(
    series: ValueSeries,
    x0: State | Sequence[float],
    t0: float,
    dt: float = DEFAULT_DT,
    sim_spec: ProblemSpec | None = None,
) -> Trajectory:
    """Roll the closed loop forward from (x0, t0) until t = 0.

    Inputs are held constant over each step (sampled at the step start from
    ``series``); the state integrates with RK4 under ``sim_spec`` dynamics
    (defaulting to ``series.spec``). Leaving the grid on
    a non-periodic dimension ends the trajectory with ``LEFT_DOMAIN``.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = series.grid
    dyn = sim_spec if sim_spec is not None else series.spec
    point = grid.wrap(tuple(x0))
    if not grid.contains(point):
        raise GridBoundsError(f"start state {tuple(x0)} outside the grid domain")
    t_end = float(series.times[-1])
    if t0 > t_end + 1e-12 or t0 < float(series.times[0]) - 1e-9:
        raise ValueError(f"start time {t0} outside stored range")
    t0 = min(t0, t_end)

    states = [State(*point)]
    controls: list[float] = []
    disturbances: list[float] = []
    status = COMPLETED
    t = t0
    remaining = t_end - t0
    while remaining > 1e-12:
        h = dt if remaining >= dt else remaining
        u, d = feedback_inputs(series, states[-1], t)
        nxt = _rk4(states[-1], u, d, h, dyn)
        nxt = State(*grid.wrap(nxt))
        controls.append(u)
        disturbances.append(d)
        states.append(nxt)
        if not grid.contains(nxt):
            status = LEFT_DOMAIN
            break
        t += h
        remaining -= h
    return Trajectory(t0, dt, states, controls, disturbances, status)


def _rk4(state: State, u: float, d: float, h: float, spec: ProblemSpec) -> tuple[float, float, float]:
    x = state
    k1 = flow(x, u, d, spec)
    k2 = flow(State(x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1], x[2] + 0.5 * h * k1[2]), u, d, spec)
    k3 = flow(State(x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1], x[2] + 0.5 * h * k2[2]), u, d, spec)
    k4 = flow(State(x[0] + h * k3[0], x[1] + h * k3[1], x[2] + h * k3[2]), u, d, spec)
    return (
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


def pathwise_value(traj: Trajectory, spec: ProblemSpec) -> float:
    """Reach-avoid outcome along a trajectory.

    The running maximum of the avoid distance caps each candidate reach
    value, and the best (smallest) capped value over the path wins. An
    escaped trajectory scores +inf: it never demonstrated capture.
    """
    if traj.status == LEFT_DOMAIN:
        return math.inf
    worst_avoid = -math.inf
    best = math.inf
    for s in traj.states:
        worst_avoid = max(worst_avoid, avoid_distance(s, spec))
        best = min(best, max(reach_distance(s, spec), worst_avoid))
    return best


def sample_errors(
    series: ValueSeries,
    n: int,
    seed: int,
    domain: Sequence[tuple[float, float]] | None = None,
    time_range: tuple[float, float] | None = None,
    dt: float = DEFAULT_DT,
    sim_spec: ProblemSpec | None = None,
) -> SampleSet:
    """Draw uniform (state, time) points and measure the solver error at each.

    Every sample has its own RNG stream derived from ``seed`` and the sample
    index, so results do not depend on evaluation order. Draws whose rollout
    leaves the domain are rejected and redrawn from the same stream, with
    the total number of redraws recorded.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    grid = series.grid
    if domain is None:
        domain = [(float(grid.lower[d]), float(grid.upper[d])) for d in range(grid.dims)]
    if time_range is None:
        time_range = (float(series.times[0]), float(series.times[-1]))
    t_lo = max(float(time_range[0]), float(series.times[0]))
    t_hi = min(float(time_range[1]), float(series.times[-1]))
    if t_lo > t_hi:
        raise ValueError(f"time range {time_range} does not intersect the stored times")

    samples: list[ErrorSample] = []
    resampled = 0
    for k in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        for attempt in range(_RESAMPLE_BUDGET):
            coords = tuple(rng.uniform(lo, hi) for lo, hi in domain)
            t = rng.uniform(t_lo, t_hi)
            traj = simulate(series, coords, t, dt=dt, sim_spec=sim_spec)
            if traj.status == COMPLETED:
                break
            resampled += 1
        else:
            raise RuntimeError(
                f"sample {k}: {_RESAMPLE_BUDGET} consecutive rollouts left the domain"
            )
        state = traj.states[0]
        v_tilde = value_at(series, state, t)
        v_roll = pathwise_value(traj, series.spec)
        samples.append(ErrorSample(state, t, v_tilde, v_roll, v_tilde - v_roll))
    return SampleSet(samples, resampled, seed)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_samples_csv(samples: Iterable[ErrorSample], path) -> None:
    """Write error samples with a fixed header and round-trippable floats."""
    rows = [
        [_fmt(s.state.x1), _fmt(s.state.x2), _fmt(s.state.x3), _fmt(s.t),
         _fmt(s.v_tilde), _fmt(s.v_rollout), _fmt(s.eps_tilde)]
        for s in samples
    ]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SAMPLES_CSV_HEADER)
        writer.writerows(rows)


def read_samples_csv(path) -> list[ErrorSample]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SAMPLES_CSV_HEADER:
            raise ValueError(f"unexpected samples header {header}")
        out = []
        for row in reader:
            x1, x2, x3, t, v_tilde, v_roll, eps = (float(c) for c in row)
            out.append(ErrorSample(State(x1, x2, x3), t, v_tilde, v_roll, eps))
    return out
