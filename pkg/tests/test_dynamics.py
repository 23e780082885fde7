import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from imit2d.dynamics import (
    OMEGA_MAX,
    V_MAX,
    BallParams,
    BallState3,
    BallTrajectory,
    WheelchairState,
    ball_energy,
    clamp_twist,
    rollout_ball,
    step_ball,
    step_wheelchair,
    twist_to_wheels,
    wheels_to_twist,
    wrap_angle,
)

NO_DRAG = BallParams(drag_coeff=0.0)


def test_apex_height_drag_free():
    traj = rollout_ball(BallState3((0, 0, 1), (10, 0, 5)), NO_DRAG, 1.0, 0.005)
    assert abs(traj.pos[:, 2].max() - (1 + 25 / (2 * 9.81))) < 1e-4


def test_resting_ball_is_equilibrium():
    s = step_ball(BallState3((1, 2, 0), (0, 0, 0)), BallParams(), 0.005)
    assert np.array_equal(s.pos, (1, 2, 0)) and np.array_equal(s.vel, (0, 0, 0))
    assert s.bounce_count == 0


def test_restitution_on_vertical_drop():
    # z chosen so the ball hits the ground at exactly -4 m/s
    g = 9.81
    z0 = 16.0 / (2 * g)
    s = BallState3((0, 0, z0), (0, 0, 0))
    traj = rollout_ball(s, NO_DRAG, 1.0, 0.005)
    k = int(np.flatnonzero(traj.bounces == 1)[0])
    # undo the gravity integrated after the impact inside the step
    t_hit = traj.impacts[0][0]
    vz_after = traj.vel[k, 2] + g * (traj.t[k] - t_hit)
    assert abs(vz_after - 3.0) < 1e-5


def test_rollout_length_and_first_state():
    s = BallState3((0, 0, 1), (5, 0, 2))
    traj = rollout_ball(s, BallParams(), 1.0, 0.005)
    assert len(traj) == 201
    assert np.array_equal(traj.pos[0], s.pos) and np.array_equal(traj.vel[0], s.vel)
    assert len(rollout_ball(s, BallParams(), 0.0, 0.005)) == 1


def test_rollout_horizon_limit():
    with pytest.raises(ValueError):
        rollout_ball(BallState3((0, 0, 1), (0, 0, 0)), BallParams(), 5.5)


def test_drag_free_range():
    traj = rollout_ball(BallState3((0, 0, 0), (10, 0, 5)), NO_DRAG, 1.5, 0.005)
    t_land, x_land, _ = traj.impacts[0]
    assert abs(t_land - 2 * 5 / 9.81) < 1e-3
    assert abs(x_land - 10 * 2 * 5 / 9.81) < 1e-3


def test_drag_free_matches_closed_form_over_two_seconds():
    p0 = np.array([0.0, 0.0, 30.0])
    v0 = np.array([4.0, -2.0, 3.0])
    traj = rollout_ball(BallState3(p0, v0), NO_DRAG, 2.0, 0.005)
    t = traj.t[:, None]
    exact = p0 + v0 * t + 0.5 * np.array([0, 0, -9.81]) * t * t
    assert np.abs(traj.pos - exact).max() < 1e-4


def test_energy_conserved_between_bounces():
    traj = rollout_ball(BallState3((0, 0, 1), (8, 3, 6)), NO_DRAG, 3.0, 0.005)
    e = ball_energy(traj.pos, traj.vel, 9.81)
    for b in np.unique(traj.bounces):
        seg = e[traj.bounces == b]
        assert np.abs(seg - seg[0]).max() / seg[0] < 1e-6


def test_bounce_count_monotone_and_ground_not_penetrated():
    traj = rollout_ball(BallState3((0, 0, 2), (15, 1, 0)), BallParams(), 5.0, 0.005)
    assert np.all(np.diff(traj.bounces) >= 0)
    assert traj.pos[:, 2].min() >= -1e-9
    assert len(traj.impacts) >= 3


def test_drag_slows_horizontal_speed():
    traj = rollout_ball(BallState3((0, 0, 50), (20, 0, 0)), BallParams(), 1.0, 0.005)
    assert np.all(np.diff(traj.vel[:, 0]) < 0)


def test_trajectory_rows_round_trip():
    traj = rollout_ball(BallState3((0, 0, 1), (5, 0, 2)), BallParams(), 1.0, 0.01)
    again = BallTrajectory.from_rows(traj.as_rows(), traj.impacts)
    assert np.array_equal(again.pos, traj.pos) and np.array_equal(again.bounces, traj.bounces)


def test_step_dt_precondition():
    with pytest.raises(ValueError):
        step_ball(BallState3((0, 0, 1), (0, 0, 0)), BallParams(), 0.03)
    with pytest.raises(ValueError):
        step_wheelchair(WheelchairState(), 1.0, 0.0, 0.0)


def test_params_validation():
    for bad in (dict(gravity=0), dict(restitution=1.0), dict(bounce_friction=1.5), dict(drag_coeff=-1)):
        with pytest.raises(ValueError):
            BallParams(**bad)


def test_wheelchair_straight_step():
    s = step_wheelchair(WheelchairState(), 1.0, 0.0, 0.005)
    assert (s.x, s.y, s.theta) == (0.005, 0.0, 0.0)


def test_wheelchair_heading_wraps():
    s = WheelchairState()
    for _ in range(200):
        s = step_wheelchair(s, 0.0, math.pi, 0.005)
        assert -math.pi < s.theta <= math.pi
    assert abs(abs(s.theta) - math.pi) < 1e-9


def test_wheelchair_clamps():
    s = step_wheelchair(WheelchairState(), 50.0, -100.0, 0.005)
    assert s.v == V_MAX and s.omega == -OMEGA_MAX


def test_twist_to_wheels_examples():
    assert twist_to_wheels(1.0, 0.0, 0.6) == (1.0, 1.0)
    vl, vr = twist_to_wheels(0.0, 2.0, 0.6)
    assert np.isclose(vl, -0.6) and np.isclose(vr, 0.6)
    with pytest.raises(ValueError):
        twist_to_wheels(1.0, 1.0, 0.0)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert abs(wrap_angle(3 * math.pi / 2) + math.pi / 2) < 1e-12


speeds = st.floats(-30, 30, allow_nan=False)


@given(speeds, speeds, st.floats(0.1, 2.0))
def test_property_wheels_recompose(v, w, track):
    vl, vr = twist_to_wheels(v, w, track)
    v2, w2 = wheels_to_twist(vl, vr, track)
    assert math.isclose(v2, v, abs_tol=1e-9) and math.isclose(w2, w, abs_tol=1e-9)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-10, 10), st.floats(0.001, 0.02))
def test_property_clamps_hold(v, w, th, dt):
    s = step_wheelchair(WheelchairState(0.0, 0.0, th), v, w, dt)
    assert abs(s.v) <= V_MAX and abs(s.omega) <= OMEGA_MAX
    assert -math.pi < s.theta <= math.pi
    assert clamp_twist(v, w) == (s.v, s.omega)


@given(st.floats(0.05, 3.0), st.floats(-25, 25), st.floats(-10, 10), st.floats(-15, 10))
def test_property_bounce_never_gains_speed(z, vx, vy, vz):
    traj = rollout_ball(BallState3((0, 0, z), (vx, vy, vz)), BallParams(), 3.0, 0.005)
    assert traj.pos[:, 2].min() >= -1e-9
    for t_hit, _, _ in traj.impacts:
        k = int(round(t_hit / 0.005))
        if 1 <= k < len(traj) - 1:
            before = np.linalg.norm(traj.vel[k - 1])
            after = np.linalg.norm(traj.vel[k + 1])
            # one step of gravity either side can add at most g * 2 dt
            assert after <= before + 2 * 9.81 * 0.005 + 1e-9
