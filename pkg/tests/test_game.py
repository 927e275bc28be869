"""Dynamics, Hamiltonian, and saddle-point input tests."""

import math

import numpy as np
import pytest

from reachgp.game import (
    ProblemSpec,
    State,
    avoid_distance,
    dissipation_bounds,
    flow,
    hamiltonian,
    hamiltonian_arrays,
    optimal_inputs,
    reach_distance,
)
from reachgp.grid import Costate, build_grid

SPEC = ProblemSpec()
TWO_PI = 2.0 * math.pi


def test_flow_hand_value():
    # heading 0.25 turns the second vehicle perpendicular to the first
    dx = flow(State(0.5, -0.5, 0.25), 0.0, 2.0, SPEC)
    assert dx[0] == pytest.approx(-1.75, abs=1e-15)
    assert dx[1] == pytest.approx(-0.25, abs=1e-15)
    assert dx[2] == pytest.approx(-1.0 / math.pi, abs=1e-15)


def test_flow_zero_relative_motion():
    # equal speeds and aligned headings cancel exactly
    dx = flow(State(0.3, 0.7, 0.0), 0.0, 0.0, SPEC)
    assert dx == (0.0, 0.0, 0.0)


def test_flow_rejects_out_of_bound_inputs():
    with pytest.raises(ValueError):
        flow(State(0.0, 0.0, 0.0), 3.5, 0.0, SPEC)
    with pytest.raises(ValueError):
        flow(State(0.0, 0.0, 0.0), 0.0, -3.5, SPEC)


def test_signed_distances():
    s = State(0.078, -0.51, 0.20)
    r = math.hypot(0.078, -0.51)
    assert reach_distance(s, SPEC) == pytest.approx(r - 0.25, abs=1e-15)
    assert avoid_distance(s, SPEC) == pytest.approx(r - 1.0, abs=1e-15)
    assert reach_distance(s, SPEC) == pytest.approx(0.26593, abs=5e-6)
    assert avoid_distance(s, SPEC) == pytest.approx(-0.48407, abs=5e-6)
    origin = State(0.0, 0.0, 0.0)
    assert reach_distance(origin, SPEC) == -0.25
    assert avoid_distance(origin, SPEC) == -1.0


def test_hamiltonian_hand_value():
    # drift -0.75, rotation term -3(1/2 - 1/2pi), turn term +3/2pi
    value = hamiltonian(State(0.5, 0.5, 0.25), Costate(1.0, 0.0, 1.0), SPEC)
    assert value == pytest.approx(3.0 / math.pi - 2.25, abs=1e-14)
    assert value == pytest.approx(-1.2950704, abs=1e-6)


def test_hamiltonian_printed_form_drops_absolute_value():
    state = State(0.2, -0.4, 0.6)
    p_neg = Costate(0.3, -0.1, -0.8)
    fixed = hamiltonian(state, p_neg, SPEC)
    printed = hamiltonian(state, p_neg, SPEC, printed_form=True)
    assert fixed - printed == pytest.approx(2.0 * SPEC.u_max * 0.8 / TWO_PI, abs=1e-14)
    p_pos = Costate(0.3, -0.1, 0.8)
    assert hamiltonian(state, p_pos, SPEC) == hamiltonian(state, p_pos, SPEC, printed_form=True)


def brute_force_saddle(state, costate, spec):
    # affine in each input, so the extrema sit on {-bound, 0, +bound}
    best_u = -math.inf
    for u in (-spec.u_max, 0.0, spec.u_max):
        worst = math.inf
        for d in (-spec.d_max, 0.0, spec.d_max):
            dx = flow(state, u, d, spec)
            worst = min(worst, sum(p * f for p, f in zip(costate, dx)))
        best_u = max(best_u, worst)
    return best_u


def test_saddle_point_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(500):
        state = State(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        costate = Costate(*rng.uniform(-2, 2, size=3))
        h = hamiltonian(state, costate, SPEC)
        assert abs(h - brute_force_saddle(state, costate, SPEC)) < 1e-12
        u, d = optimal_inputs(state, costate, SPEC)
        dx = flow(state, u, d, SPEC)
        achieved = sum(p * f for p, f in zip(costate, dx))
        assert abs(h - achieved) < 1e-12


def test_optimal_inputs_signs_and_ties():
    state = State(0.5, 0.0, 0.0)
    u, d = optimal_inputs(state, Costate(0.0, 0.0, 2.0), SPEC)
    assert u == SPEC.u_max
    u, _ = optimal_inputs(state, Costate(0.0, 0.0, -2.0), SPEC)
    assert u == -SPEC.u_max
    # ties resolve to the non-negative branch of the sign
    u, _ = optimal_inputs(state, Costate(1.0, 0.0, 0.0), SPEC)
    assert u == SPEC.u_max
    # rotation coefficient p1*x2 - p2*x1 - p3/2pi = 0 here
    _, d = optimal_inputs(State(0.0, 0.0, 0.0), Costate(1.0, 1.0, 0.0), SPEC)
    assert d == -SPEC.d_max
    _, d = optimal_inputs(State(0.0, 1.0, 0.0), Costate(1.0, 0.0, 0.0), SPEC)
    assert d == -SPEC.d_max
    _, d = optimal_inputs(State(0.0, -1.0, 0.0), Costate(1.0, 0.0, 0.0), SPEC)
    assert d == SPEC.d_max


def test_hamiltonian_positively_homogeneous():
    rng = np.random.default_rng(12)
    for _ in range(100):
        state = State(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        costate = Costate(*rng.uniform(-2, 2, size=3))
        lam = rng.uniform(0, 5)
        h = hamiltonian(state, costate, SPEC)
        scaled = hamiltonian(state, Costate(*(lam * p for p in costate)), SPEC)
        assert abs(scaled - lam * h) < 1e-12


def test_hamiltonian_arrays_matches_scalar():
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, size=(4, 30))
    x[2] = np.abs(x[2])
    p = rng.uniform(-2, 2, size=(3, 30))
    arr = hamiltonian_arrays(x[0], x[1], x[2], p[0], p[1], p[2], SPEC)
    for i in range(30):
        one = hamiltonian(State(x[0, i], x[1, i], x[2, i]), Costate(p[0, i], p[1, i], p[2, i]), SPEC)
        assert arr[i] == pytest.approx(one, abs=1e-14)


def test_dissipation_bounds_reference_grid():
    g = build_grid([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0], [21, 21, 21], [False, False, True])
    a1, a2, a3 = dissipation_bounds(g, SPEC)
    assert a1 == pytest.approx(4.5, abs=1e-12)
    assert a2 == pytest.approx(3.75, abs=1e-12)
    assert a3 == pytest.approx(6.0 / TWO_PI, abs=1e-12)
    with pytest.raises(ValueError):
        dissipation_bounds(build_grid([0.0], [1.0], [11], [False]), SPEC)


def test_dissipation_bounds_dominate_velocities():
    # the bounds must majorise |dH/dp| for admissible inputs anywhere on the grid
    g = build_grid([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0], [21, 21, 21], [False, False, True])
    bound = dissipation_bounds(g, SPEC)
    rng = np.random.default_rng(14)
    for _ in range(200):
        state = State(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1))
        u = rng.uniform(-SPEC.u_max, SPEC.u_max)
        d = rng.uniform(-SPEC.d_max, SPEC.d_max)
        dx = flow(state, u, d, SPEC)
        for i in range(3):
            assert abs(dx[i]) <= bound[i] + 1e-12


def test_problem_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(v_e=0.0)
    with pytest.raises(ValueError):
        ProblemSpec(u_max=-1.0)
    with pytest.raises(ValueError):
        ProblemSpec(r1=1.0, r2=0.5)
    with pytest.raises(ValueError):
        ProblemSpec(horizon=-0.1)


def test_problem_spec_round_trip():
    spec = ProblemSpec(v_e=0.5, v_p=1.25)
    again = ProblemSpec.from_dict(spec.to_dict())
    assert again == spec
    faster = spec.with_speeds(1.0, 1.0)
    assert faster.v_e == 1.0 and faster.v_p == 1.0
    assert faster.r1 == spec.r1
