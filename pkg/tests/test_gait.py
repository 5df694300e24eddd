"""Gait scheduling, swing curves, and joint mapping tests."""

import numpy as np
import pytest

from ergsim.dynamics import RobotParams, rk4_step, standing_state
from ergsim.gait import (
    PAIRS,
    GaitConfig,
    PidGains,
    SingularLegError,
    SwingPlan,
    TrotController,
    advance_phase,
    joints_from_feet,
    reference_trajectory,
    rotate_reference,
    stance_command,
    swing_target,
)
from ergsim.grf import PdGains
from ergsim.so3 import rot_x, rot_y, rot_z


# ---------------------------------------------------------------------------
# timing


def test_phase_examples():
    cfg = GaitConfig()
    ph = advance_phase(0.0, cfg)
    assert ph.pair == 0 and ph.phase == 0.0
    ph = advance_phase(0.25, cfg)
    assert ph.pair == 1 and ph.phase == 0.0
    ph = advance_phase(0.375, cfg)
    assert ph.pair == 1 and ph.phase == pytest.approx(0.5)


def test_diagonals_partition_legs_and_alternate():
    cfg = GaitConfig()
    for k in range(8):
        ph = advance_phase(k * cfg.period + 0.1, cfg)
        assert ph.pair == k % 2
        assert sorted(ph.stance_legs + ph.swing_legs) == [0, 1, 2, 3]
    assert PAIRS[0] == (0, 3)  # FL front, RR rear
    assert PAIRS[1] == (1, 2)  # FR front, RL rear


def test_reference_trajectory():
    cfg = GaitConfig()
    x0 = reference_trajectory(0.0, cfg)
    assert np.allclose(x0, [0.0, 0.0, 0.45, 0.2, 0.0, 0.0])
    x5 = reference_trajectory(5.0, cfg)
    assert x5[0] == pytest.approx(1.0)
    for t in np.linspace(0.0, 7.0, 29):
        assert reference_trajectory(t, cfg)[2] == 0.45


# ---------------------------------------------------------------------------
# reference rotation


def test_rotate_reference_identity_and_quarter_turn():
    ref = np.array([1.0, 0.0, 0.0, 0.3, -0.2, 0.1])
    assert np.allclose(rotate_reference(ref, np.eye(3)), ref)
    out = rotate_reference(ref, rot_z(np.pi / 2))
    assert np.allclose(out[:3], [0.0, -1.0, 0.0], atol=1e-15)
    assert np.allclose(out[3:], rot_z(-np.pi / 2) @ ref[3:], atol=1e-15)


def test_rotate_reference_group_action():
    rng = np.random.default_rng(41)
    for _ in range(20):
        R1 = rot_z(rng.uniform(-np.pi, np.pi)) @ rot_y(rng.uniform(-1, 1))
        R2 = rot_x(rng.uniform(-1, 1)) @ rot_z(rng.uniform(-np.pi, np.pi))
        ref = rng.normal(size=6)
        direct = rotate_reference(ref, R1 @ R2)
        chained = rotate_reference(rotate_reference(ref, R1), R2)
        assert np.allclose(direct, chained, atol=1e-12)


# ---------------------------------------------------------------------------
# stance PD


def test_stance_command_zero_and_pure_position_error():
    gains = PdGains()
    x = np.array([0.1, -0.2, 0.45, 0.05, 0.0, -0.01])
    assert np.allclose(stance_command(x, x, gains), 0.0)
    e = np.array([0.02, -0.01, 0.03])
    out = stance_command(np.concatenate([e, np.zeros(3)]), np.zeros(6), gains)
    assert np.allclose(out, 30.0 * e, atol=1e-12)


def test_stance_command_affine_slope_matches_gains():
    gains = PdGains(K_p=np.diag([25.0, 30.0, 35.0]), K_d=np.diag([6.0, 8.0, 10.0]))
    x_p = np.array([0.0, 0.0, 0.45, 0.1, 0.0, 0.0])
    base = stance_command(x_p, x_p, gains)
    slope = np.empty((3, 6))
    for k in range(6):
        dx = np.zeros(6)
        dx[k] = 1e-3
        slope[:, k] = (stance_command(x_p + dx, x_p, gains) - base) / 1e-3
    assert np.max(np.abs(slope - gains.K)) <= 1e-9


# ---------------------------------------------------------------------------
# swing curve


def test_swing_endpoints_and_zero_end_velocity():
    start = np.array([-0.05, 0.02, -0.45])
    end = np.array([0.08, 0.0, -0.45])
    plan = SwingPlan.from_liftoff(start, end, 0.2, 0.25)
    p0, v0 = swing_target(0.0, plan)
    p1, v1 = swing_target(1.0, plan)
    assert np.array_equal(p0, start)
    assert np.array_equal(p1, end)
    assert np.array_equal(v0, np.zeros(3))
    assert np.array_equal(v1, np.zeros(3))


def test_swing_apex_clearance():
    start = np.array([-0.05, 0.01, -0.45])
    end = np.array([0.08, 0.0, -0.45])
    plan = SwingPlan.from_liftoff(start, end, 0.2, 0.25)
    # flat chord: apex is exactly swing_height above it, at mid-swing
    apex, _ = swing_target(0.5, plan)
    assert apex[2] - start[2] == pytest.approx(0.2, abs=1e-12)
    s = np.linspace(0.0, 1.0, 2001)
    zmax = max(plan.position(si)[2] for si in s)
    assert zmax == pytest.approx(start[2] + 0.2, abs=1e-9)
    # tilted chord stays within a millimeter of the target clearance
    tilted = SwingPlan.from_liftoff(start, end + [0, 0, 0.02], 0.2, 0.25)
    eta = max(
        tilted.position(si)[2] - ((1 - si) * start[2] + si * tilted.end[2])
        for si in s
    )
    assert eta == pytest.approx(0.2, abs=1e-3)


def test_swing_velocity_matches_position_derivative():
    plan = SwingPlan.from_liftoff([-0.05, 0.0, -0.45], [0.08, 0.0, -0.44], 0.2, 0.25)
    eps = 1e-6
    for s in (0.1, 0.37, 0.5, 0.81):
        fd = (plan.position(s + eps) - plan.position(s - eps)) / (2 * eps * plan.period)
        assert np.allclose(plan.velocity(s), fd, atol=1e-6)
        fd2 = (plan.velocity(s + eps) - plan.velocity(s - eps)) / (2 * eps * plan.period)
        assert np.allclose(plan.acceleration(s), fd2, atol=1e-4)


# ---------------------------------------------------------------------------
# joint mapping


def test_straight_down_leg_decouples():
    params = RobotParams()
    state = standing_state(params)
    des_pos = np.stack([params.l_h[i] + [0.0, 0.0, -0.45] for i in range(4)])
    des_vel = np.zeros((4, 3))
    des_acc = np.zeros((4, 3))
    des_acc[:, 2] = 2.5  # vertical foot acceleration a
    u, _ = joints_from_feet(
        state, params, des_pos, des_vel, des_acc, PidGains(), np.zeros((4, 3)), 1e-3
    )
    u = u.reshape(4, 3)
    assert np.allclose(u[:, 0], 0.0, atol=1e-12)  # hip pitch
    assert np.allclose(u[:, 1], 0.0, atol=1e-12)  # hip roll
    assert np.allclose(u[:, 2], -2.5, atol=1e-12)  # r'' = -a


def test_zero_error_command_holds_foot_trajectory():
    # desired = current foot state: the mapped acceleration keeps the
    # relative foot motion ballistic over one integration step
    params = RobotParams(g=np.zeros(3))
    rng = np.random.default_rng(43)
    state = standing_state(params)
    x = state.x.copy()
    x[18:30] = np.tile([0.1, -0.05, 0.5], 4) + rng.normal(scale=0.05, size=12)
    x[30:42] = rng.normal(scale=0.3, size=12)
    state = type(state)(x=x)

    from ergsim.dynamics import leg_jacobian, leg_offset

    des_pos = np.empty((4, 3))
    des_vel = np.empty((4, 3))
    for i in range(4):
        q = state.q_L[3 * i : 3 * i + 3]
        qd = state.qd_L[3 * i : 3 * i + 3]
        des_pos[i] = params.l_h[i] + leg_offset(*q)
        des_vel[i] = leg_jacobian(*q) @ qd
    u, _ = joints_from_feet(
        state, params, des_pos, des_vel, np.zeros((4, 3)), PidGains(),
        np.zeros((4, 3)), 1e-3,
    )
    dt = 1e-3
    nxt = rk4_step(state, u, np.zeros((4, 3)), dt, params)
    for i in range(4):
        q1 = nxt.q_L[3 * i : 3 * i + 3]
        predicted = des_pos[i] + dt * des_vel[i]
        moved = params.l_h[i] + leg_offset(*q1)
        assert np.linalg.norm(moved - predicted) <= 1e-6


def test_singular_leg_raises_with_index():
    params = RobotParams()
    state = standing_state(params)
    x = state.x.copy()
    x[18 + 3 * 2 + 1] = np.pi / 2 - 1e-8  # leg RL hip-x near gimbal edge
    state = type(state)(x=x)
    with pytest.raises(SingularLegError) as err:
        joints_from_feet(
            state, params, np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 3)),
            PidGains(), np.zeros((4, 3)), 1e-3,
        )
    assert err.value.leg == 2


def test_pid_gain_validation():
    with pytest.raises(ValueError):
        PidGains(k_p=0.0)
    with pytest.raises(ValueError):
        PidGains(k_i=-1.0)


# ---------------------------------------------------------------------------
# controller bookkeeping


def make_controller():
    params = RobotParams()
    cfg = GaitConfig()
    state = standing_state(params)
    ctl = TrotController(cfg, params, PdGains(), PidGains(), state)
    return ctl, state, cfg


def test_controller_stance_swing_bookkeeping():
    ctl, state, cfg = make_controller()
    x_w = np.array([0.0, 0.0, 0.45, 0.0, 0.0, 0.0])
    dt = 1e-3

    ctl.step(0.0, state, x_w, dt, settling=False)
    assert list(ctl.mode) == [0, 1, 1, 0]  # FL+RR stance, FR+RL swing
    for i in (1, 2):
        start = ctl.plans[i].start
        from ergsim.dynamics import leg_offset

        measured = ctl.params.l_h[i] + leg_offset(*state.q_L[3 * i : 3 * i + 3])
        assert np.allclose(start, measured, atol=1e-15)

    ctl.integral[:] = 0.7  # dirty the integrators
    swing_ends = {i: ctl.plans[i].end.copy() for i in (1, 2)}
    ctl.step(cfg.period + 1e-9, state, x_w, dt, settling=False)
    assert list(ctl.mode) == [1, 0, 0, 1]
    for i in (1, 2):
        # touchdown continuity: stance reference starts at the commanded
        # swing end, integrator cleared
        drift = ctl.des_pos[i] - (swing_ends[i] + dt * ctl.des_vel[i])
        assert np.linalg.norm(drift) <= 1e-12
        # reset at the switch; only one step's dt*e_pos may have accrued
        assert np.max(np.abs(ctl.integral[i])) <= dt * 0.5
    for i in (0, 3):
        assert ctl.plans[i] is not None
        assert np.max(np.abs(ctl.integral[i])) <= dt * 0.5


def test_controller_settling_keeps_all_stance():
    ctl, state, _ = make_controller()
    x_w = np.array([0.0, 0.0, 0.45, 0.0, 0.0, 0.0])
    for k in range(5):
        u, a_cmd, ph = ctl.step(k * 1e-3, state, x_w, 1e-3, settling=True)
    assert list(ctl.mode) == [0, 0, 0, 0]
    assert np.all(np.isfinite(u))
