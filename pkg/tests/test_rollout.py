"""Closed-loop rollout, pathwise scoring, and error-sampling tests."""

import math

import numpy as np
import pytest

from reachgp.game import ProblemSpec, State, hamiltonian, optimal_inputs
from reachgp.grid import Costate, GridBoundsError, interpolate, gradient_field
from reachgp.rollout import (
    COMPLETED,
    LEFT_DOMAIN,
    SAMPLES_CSV_HEADER,
    Trajectory,
    feedback_inputs,
    pathwise_value,
    read_samples_csv,
    sample_errors,
    simulate,
    write_samples_csv,
)
from reachgp.solver import ValueSeries, value_at

SPEC = ProblemSpec()
PROBE = State(0.078, -0.51, 0.20)


def constant_series(grid, spec, value=0.5):
    flat = np.full(grid.shape, value)
    return ValueSeries(grid, np.array([-1.0, 0.0]), np.stack([flat, flat]), spec)


def test_feedback_matches_node_gradient(reference_series, reference_grid):
    # at a stored node and slice time the interpolation collapses to the
    # cached central-difference gradient
    k_t = 10
    i, j, k = 7, 12, 4
    grads = gradient_field(reference_series.slice_field(k_t))
    p = Costate(*(g.array[i, j, k] for g in grads))
    state = State(
        reference_grid.axis_coords(0)[i],
        reference_grid.axis_coords(1)[j],
        reference_grid.axis_coords(2)[k],
    )
    want = optimal_inputs(state, p, SPEC)
    assert feedback_inputs(reference_series, state, float(reference_series.times[k_t])) == want


def test_feedback_consistent_with_saddle(reference_series):
    # the realised rate p . f(x, u*, d*) equals the Hamiltonian of the
    # interpolated costate
    from reachgp.game import flow
    from reachgp.rollout import _costate_at

    state = State(0.05, -0.1, 0.3)
    t = float(reference_series.times[40])
    p = _costate_at(reference_series, state, t)
    u, d = feedback_inputs(reference_series, state, t)
    dx = flow(state, u, d, SPEC)
    assert sum(pi * fi for pi, fi in zip(p, dx)) == pytest.approx(
        hamiltonian(state, p, SPEC), abs=1e-12
    )


def test_feedback_out_of_domain(reference_series):
    with pytest.raises(GridBoundsError):
        feedback_inputs(reference_series, (1.7, 0.0, 0.2), -0.5)


def test_simulate_stationary_when_flow_vanishes(reference_grid):
    # zero turn bounds force u = d = 0; equal speeds at heading zero give
    # zero relative flow
    frozen = ProblemSpec(u_max=0.0, d_max=0.0)
    series = constant_series(reference_grid, frozen)
    traj = simulate(series, (0.3, 0.4, 0.0), -1.0)
    assert traj.status == COMPLETED
    for s in traj.states:
        assert s == pytest.approx((0.3, 0.4, 0.0), abs=1e-12)
    assert all(u == 0.0 for u in traj.controls)
    assert all(d == 0.0 for d in traj.disturbances)


def test_simulate_single_state_at_zero(reference_series):
    traj = simulate(reference_series, PROBE, 0.0)
    assert traj.status == COMPLETED
    assert len(traj.states) == 1
    assert traj.controls == []


def test_simulate_validation(reference_series):
    with pytest.raises(ValueError):
        simulate(reference_series, PROBE, -0.5, dt=0.0)
    with pytest.raises(GridBoundsError):
        simulate(reference_series, (1.4, 0.0, 0.2), -0.5)
    with pytest.raises(ValueError):
        simulate(reference_series, PROBE, -1.7)


def test_simulate_wraps_heading(reference_series):
    traj = simulate(reference_series, (0.0, 0.0, 0.97), -1.0)
    for s in traj.states:
        assert 0.0 <= s.x3 < 1.0


def test_simulate_left_domain_scores_inf(reference_series):
    # heading 0.5 reverses the pursuer: relative drift -1.5 exits the box
    traj = simulate(reference_series, (-0.9, 0.5, 0.5), -1.0)
    assert traj.status == LEFT_DOMAIN
    assert pathwise_value(traj, SPEC) == math.inf


def test_simulate_dt_refinement(reference_series):
    a = simulate(reference_series, PROBE, -0.42, dt=0.01)
    b = simulate(reference_series, PROBE, -0.42, dt=0.005)
    assert a.status == b.status == COMPLETED
    assert np.max(np.abs(np.array(a.states[-1]) - np.array(b.states[-1]))) < 1e-5


def test_trajectory_times_end_at_zero(reference_series):
    traj = simulate(reference_series, PROBE, -0.42)
    times = traj.times()
    assert times[0] == -0.42
    assert times[-1] == 0.0
    assert len(times) == len(traj.states)


def straight_line_trajectory(points):
    states = [State(*p) for p in points]
    return Trajectory(
        start_time=-0.1 * (len(points) - 1),
        dt=0.1,
        states=states,
        controls=[0.0] * (len(states) - 1),
        disturbances=[0.0] * (len(states) - 1),
        status=COMPLETED,
    )


def test_pathwise_value_inside_reach_set():
    traj = straight_line_trajectory([(0.2, 0.0, 0.0), (0.1, 0.0, 0.0), (0.05, 0.0, 0.0)])
    want = min(math.hypot(*p[:2]) for p in [(0.05, 0.0)]) - SPEC.r1
    assert pathwise_value(traj, SPEC) == pytest.approx(want, abs=1e-15)
    assert pathwise_value(traj, SPEC) < 0.0


def test_pathwise_value_avoid_locks_before_reach():
    # touching the collision ring first caps every later candidate
    traj = straight_line_trajectory([(1.1, 0.0, 0.0), (0.5, 0.0, 0.0), (0.1, 0.0, 0.0)])
    assert pathwise_value(traj, SPEC) == pytest.approx(0.1, abs=1e-12)
    assert pathwise_value(traj, SPEC) > 0.0


def test_pathwise_value_truncation_invariant(reference_series, train_seed):
    rng = np.random.default_rng(train_seed)
    checked = 0
    while checked < 100:
        x = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        t = rng.uniform(-1.0, -0.05)
        traj = simulate(reference_series, x, t)
        if traj.status != COMPLETED:
            continue
        full = pathwise_value(traj, SPEC)
        worst = -math.inf
        best_k = 0
        best = math.inf
        for k, s in enumerate(traj.states):
            worst = max(worst, math.hypot(s.x1, s.x2) - SPEC.r2)
            cand = max(math.hypot(s.x1, s.x2) - SPEC.r1, worst)
            if cand < best:
                best, best_k = cand, k
        cut = Trajectory(
            traj.start_time,
            traj.dt,
            traj.states[: best_k + 1],
            traj.controls[:best_k],
            traj.disturbances[:best_k],
            COMPLETED,
        )
        assert pathwise_value(cut, SPEC) == full
        checked += 1


def test_rollout_inputs_bang_bang(reference_samples, reference_series):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        traj = simulate(reference_series, x, -0.6)
        for u in traj.controls:
            assert abs(u) == SPEC.u_max
        for d in traj.disturbances:
            assert abs(d) == SPEC.d_max


def test_pathwise_probe(reference_series):
    traj = simulate(reference_series, PROBE, -0.42)
    assert traj.status == COMPLETED
    assert pathwise_value(traj, SPEC) == pytest.approx(-0.01, abs=0.05)


def test_sample_errors_deterministic(reference_series):
    a = sample_errors(reference_series, 20, 99)
    b = sample_errors(reference_series, 20, 99)
    assert a.resampled == b.resampled
    for sa, sb in zip(a, b):
        assert sa == sb


def test_sample_errors_identity_and_bookkeeping(reference_samples):
    assert len(reference_samples) == 1000
    assert reference_samples.resampled > 0
    for s in reference_samples:
        assert s.eps_tilde == s.v_tilde - s.v_rollout
        assert -1.0 <= s.t <= 0.0
        assert abs(s.state.x1) <= 1.0 and abs(s.state.x2) <= 1.0


def test_sample_errors_terminal_short_circuit(reference_series):
    drawn = sample_errors(reference_series, 50, 5, time_range=(0.0, 0.0))
    for s in drawn:
        want = max(math.hypot(s.state.x1, s.state.x2) - SPEC.r1,
                   math.hypot(s.state.x1, s.state.x2) - SPEC.r2)
        assert s.v_rollout == pytest.approx(want, abs=1e-12)
    assert drawn.rms_error() < 0.02


def test_sample_errors_validation(reference_series):
    with pytest.raises(ValueError):
        sample_errors(reference_series, 0, 1)
    with pytest.raises(ValueError):
        sample_errors(reference_series, 5, 1, time_range=(0.5, 1.0))


def test_sample_errors_dt_refinement(reference_series):
    rng = np.random.default_rng(17)
    diffs = []
    while len(diffs) < 100:
        x = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        t = rng.uniform(-1.0, 0.0)
        coarse = simulate(reference_series, x, t, dt=0.01)
        fine = simulate(reference_series, x, t, dt=0.005)
        if coarse.status != COMPLETED or fine.status != COMPLETED:
            continue
        diffs.append(pathwise_value(coarse, SPEC) - pathwise_value(fine, SPEC))
    assert math.sqrt(np.mean(np.square(diffs))) < 1e-3


def test_samples_csv_round_trip(tmp_path, reference_samples):
    path = tmp_path / "samples.csv"
    subset = reference_samples.samples[:40]
    write_samples_csv(subset, path)
    back = read_samples_csv(path)
    assert back == subset
    header = path.read_text().splitlines()[0]
    assert header.split(",") == SAMPLES_CSV_HEADER


def test_samples_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_samples_csv(path)
