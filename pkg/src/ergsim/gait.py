"""Trot gait: timing state machine, swing curves, and joint-space control.

Frame bookkeeping is deliberately split.  Stance trackers live in the
body frame: the body PD command is computed from the R_B^T-rotated
reference and stance feet integrate the mirrored command d''_F =
-a_cmd there.  Holding stance targets in body axes resists attitude
excursions within a stance (the trunk rocks, the held leg targets
press the ground, the ground presses back), but the anchor stored at
each touchdown contains the attitude of that instant, so the y/z
target components also relax toward the nominal ride geometry to keep
diagonal swaps from ratcheting the inherited tilt (see _LEVEL_RATE_*).
Swing curves instead live in inertial axes relative to the body
position and are rotated into the body frame per instant: planned this
way a touchdown point keeps its height above the ground no matter how
the trunk tilts, whereas a body-frame curve dives with the pitch and
hammers the foot into the floor.  A foot-space PID plus the leg
Jacobian maps the desired states to joint accelerations.
"""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np

from .dynamics import (
    FullState,
    RobotParams,
    leg_jacobian,
    leg_offset,
    leg_velocity_product,
)
from .grf import PdGains

__all__ = [
    "PAIRS",
    "GaitConfig",
    "GaitPhase",
    "PidGains",
    "SingularLegError",
    "SwingPlan",
    "TrotController",
    "advance_phase",
    "joints_from_feet",
    "reference_trajectory",
    "rotate_reference",
    "stance_command",
    "swing_target",
]

# stance diagonals as (front leg, rear leg) index pairs; legs are ordered
# FL, FR, RL, RR
PAIRS = ((0, 3), (1, 2))

logger = logging.getLogger(__name__)

_DET_TOL = 1e-8

# Stance targets inherit the trunk attitude present at touchdown (the
# entry anchor is R_B^T-rotated), so with nothing else in play roll,
# pitch and yaw errors re-latch at every diagonal swap and accumulate
# as a random walk.  During stance the z and y target components
# therefore relax toward the nominal ride geometry at these rates
# (1/s); the inherited tilt then bleeds away through differential
# loading of feet that stay in contact.  The x component must NOT
# relax: it carries the propulsion bookkeeping of the planted foot.
_LEVEL_RATE_Z = 16.0
_LEVEL_RATE_Y = 8.0


class SingularLegError(RuntimeError):
    """Leg Jacobian determinant below tolerance; carries the leg index."""

    def __init__(self, leg: int, det: float):
        super().__init__(f"leg {leg} jacobian singular (det={det:.3e})")
        self.leg = leg


@dataclasses.dataclass
class GaitConfig:
    period: float = 0.25
    n_steps: int = 20
    swing_height: float = 0.2
    step_ahead: float = 0.08
    v_target: float = 0.2
    x0: float = 0.0
    y0: float = 0.0
    z0: float = 0.45
    settle: float = 0.3

    def __post_init__(self):
        if not self.period > 0.0:
            raise ValueError("period must be positive")
        if not self.swing_height > 0.0:
            raise ValueError("swing_height must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.z0 > 0.0:
            raise ValueError("z0 must be positive")
        if self.settle < 0.0:
            raise ValueError("settle must be nonnegative")


@dataclasses.dataclass(frozen=True)
class GaitPhase:
    t: float
    pair: int  # index into PAIRS
    phase: float  # position within the current period, [0, 1)

    @property
    def stance_legs(self):
        return PAIRS[self.pair]

    @property
    def swing_legs(self):
        return PAIRS[1 - self.pair]


def advance_phase(t: float, cfg: GaitConfig) -> GaitPhase:
    """Timing state machine: diagonals swap every period."""
    k = int(t // cfg.period)
    return GaitPhase(t=t, pair=k % 2, phase=t / cfg.period - k)


def reference_trajectory(t: float, cfg: GaitConfig) -> np.ndarray:
    """Constant-height, constant-speed body reference [p; v]."""
    return np.array(
        [cfg.x0 + cfg.v_target * t, cfg.y0, cfg.z0, cfg.v_target, 0.0, 0.0]
    )


def rotate_reference(ref, R_B) -> np.ndarray:
    """Express a [p; v] reference in the body frame (both blocks by R_B^T)."""
    ref = np.asarray(ref, dtype=float)
    out = np.empty(6)
    out[:3] = R_B.T @ ref[:3]
    out[3:] = R_B.T @ ref[3:]
    return out


def stance_command(x_w, x_p, gains: PdGains) -> np.ndarray:
    """Body acceleration command of the stance PD; feet mirror it as -a."""
    return gains.K @ (np.asarray(x_w, dtype=float) - np.asarray(x_p, dtype=float))


# ---------------------------------------------------------------------------
# swing trajectory

@dataclasses.dataclass
class SwingPlan:
    """Quartic Bezier foot path, inertial axes relative to the body,
    parametrized by the gait phase.  P0 = P1 and P3 = P4 pin zero end
    velocities; the middle point is raised so the apex clears the chord
    by the swing height."""

    ctrl: np.ndarray  # (5, 3)
    period: float

    def __post_init__(self):
        # first/second control-point differences, prescaled; the sim
        # evaluates these every step so they are worth caching
        self._d = 4.0 * (self.ctrl[1:] - self.ctrl[:-1]) / self.period
        self._d2 = (
            12.0
            * (self.ctrl[2:] - 2.0 * self.ctrl[1:-1] + self.ctrl[:-2])
            / self.period**2
        )

    @classmethod
    def from_liftoff(cls, start, end, height: float, period: float) -> "SwingPlan":
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        mid = 0.5 * (start + end)
        # z(1/2) = (z0 + z4)/2 + 3/8 * (P2z - (z0 + z4)/2): raise P2 by
        # 8h/3 to put the apex exactly h above the chord midpoint
        mid[2] += height * 8.0 / 3.0
        return cls(ctrl=np.stack([start, start, mid, end, end]), period=period)

    @property
    def start(self) -> np.ndarray:
        return self.ctrl[0]

    @property
    def end(self) -> np.ndarray:
        return self.ctrl[4]

    def position(self, s: float) -> np.ndarray:
        c = 1.0 - s
        w = np.array((c**4, 4 * c**3 * s, 6 * c * c * s * s, 4 * c * s**3, s**4))
        return w @ self.ctrl

    def velocity(self, s: float) -> np.ndarray:
        c = 1.0 - s
        w = np.array((c * c * c, 3 * c * c * s, 3 * c * s * s, s * s * s))
        return w @ self._d

    def acceleration(self, s: float) -> np.ndarray:
        c = 1.0 - s
        w = np.array((c * c, 2 * c * s, s * s))
        return w @ self._d2


def swing_target(phase: float, plan: SwingPlan):
    """Foot position and velocity on the swing curve at the given phase."""
    return plan.position(phase), plan.velocity(phase)


# ---------------------------------------------------------------------------
# joint-space mapping


def _det3(A) -> float:
    return (
        A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
        - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
        + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
    )


def _solve3(A, det: float, b) -> np.ndarray:
    # Cramer; cheaper than a LAPACK round trip at this size
    x = np.empty(3)
    x[0] = (
        b[0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
        - A[0, 1] * (b[1] * A[2, 2] - A[1, 2] * b[2])
        + A[0, 2] * (b[1] * A[2, 1] - A[1, 1] * b[2])
    ) / det
    x[1] = (
        A[0, 0] * (b[1] * A[2, 2] - A[1, 2] * b[2])
        - b[0] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
        + A[0, 2] * (A[1, 0] * b[2] - b[1] * A[2, 0])
    ) / det
    x[2] = (
        A[0, 0] * (A[1, 1] * b[2] - b[1] * A[2, 1])
        - A[0, 1] * (A[1, 0] * b[2] - b[1] * A[2, 0])
        + b[0] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
    ) / det
    return x


@dataclasses.dataclass
class PidGains:
    """Per-axis foot-space tracking gains."""

    k_p: float = 400.0
    k_i: float = 20.0
    k_d: float = 40.0

    def __post_init__(self):
        if self.k_p <= 0.0 or self.k_d < 0.0 or self.k_i < 0.0:
            raise ValueError("PID gains must be nonnegative with k_p > 0")


def joints_from_feet(
    state: FullState,
    params: RobotParams,
    des_pos,
    des_vel,
    des_acc,
    pid: PidGains,
    integral,
    dt: float,
):
    """Joint accelerations tracking desired body-frame foot states.

    u_L = J_leg^{-1} (a_des + PID(e) - Jdot qdot) per leg.  Raises
    SingularLegError before touching any output if a leg is at a
    Jacobian singularity.  Returns (u_L, updated integral state).

    The body is spelled out in scalars: this is the hottest control-path
    function and the array form spent most of its time building
    3-element temporaries.
    """
    joints = state.x[18:42].tolist()  # 12 angles then 12 rates
    legs = []
    for i in range(4):
        j = 3 * i
        phi, gamma, r = joints[j], joints[j + 1], joints[j + 2]
        sphi, cphi = math.sin(phi), math.cos(phi)
        sg, cg = math.sin(gamma), math.cos(gamma)
        # leg_jacobian entries
        a00, a01, a02 = -r * cphi * cg, r * sphi * sg, -sphi * cg
        a10, a11, a12 = 0.0, r * cg, sg
        a20, a21, a22 = r * sphi * cg, r * cphi * sg, -cphi * cg
        det = (
            a00 * (a11 * a22 - a12 * a21)
            - a01 * (a10 * a22 - a12 * a20)
            + a02 * (a10 * a21 - a11 * a20)
        )
        if abs(det) < _DET_TOL:
            raise SingularLegError(i, det)
        legs.append(
            (sphi, cphi, sg, cg, a00, a01, a02, a10, a11, a12, a20, a21, a22, det)
        )

    dp = np.asarray(des_pos, dtype=float).tolist()
    dv = np.asarray(des_vel, dtype=float).tolist()
    da = np.asarray(des_acc, dtype=float).tolist()
    lh = params.l_h.tolist()
    old_int = np.asarray(integral, dtype=float).tolist()
    k_p, k_i, k_d = pid.k_p, pid.k_i, pid.k_d
    u_L = np.empty(12)
    new_integral = np.empty((4, 3))
    for i in range(4):
        j = 3 * i
        r = joints[j + 2]
        phid, gammad, rd = joints[j + 12], joints[j + 13], joints[j + 14]
        sphi, cphi, sg, cg, a00, a01, a02, a10, a11, a12, a20, a21, a22, det = legs[i]
        # position error against l_h + leg_offset
        e0 = dp[i][0] - (lh[i][0] - r * sphi * cg)
        e1 = dp[i][1] - (lh[i][1] + r * sg)
        e2 = dp[i][2] - (lh[i][2] - r * cphi * cg)
        # velocity error against J qdot
        ev0 = dv[i][0] - (a00 * phid + a01 * gammad + a02 * rd)
        ev1 = dv[i][1] - (a10 * phid + a11 * gammad + a12 * rd)
        ev2 = dv[i][2] - (a20 * phid + a21 * gammad + a22 * rd)
        n0 = old_int[i][0] + dt * e0
        n1 = old_int[i][1] + dt * e1
        n2 = old_int[i][2] + dt * e2
        new_integral[i, 0] = n0
        new_integral[i, 1] = n1
        new_integral[i, 2] = n2
        # leg_velocity_product(q, qd)
        rate2 = phid * phid + gammad * gammad
        u1d = cphi * cg * phid - sphi * sg * gammad
        u2d = cg * gammad
        u3d = -sphi * cg * phid - cphi * sg * gammad
        u1dd = -sphi * cg * rate2 - 2.0 * cphi * sg * phid * gammad
        u2dd = -sg * gammad * gammad
        u3dd = -cphi * cg * rate2 + 2.0 * sphi * sg * phid * gammad
        b0 = da[i][0] + k_p * e0 + k_i * n0 + k_d * ev0 - (-2.0 * rd * u1d - r * u1dd)
        b1 = da[i][1] + k_p * e1 + k_i * n1 + k_d * ev1 - (2.0 * rd * u2d + r * u2dd)
        b2 = da[i][2] + k_p * e2 + k_i * n2 + k_d * ev2 - (-2.0 * rd * u3d - r * u3dd)
        # Cramer, same cofactor layout as _solve3
        u_L[j] = (
            b0 * (a11 * a22 - a12 * a21)
            - a01 * (b1 * a22 - a12 * b2)
            + a02 * (b1 * a21 - a11 * b2)
        ) / det
        u_L[j + 1] = (
            a00 * (b1 * a22 - a12 * b2)
            - b0 * (a10 * a22 - a12 * a20)
            + a02 * (a10 * b2 - b1 * a20)
        ) / det
        u_L[j + 2] = (
            a00 * (a11 * b2 - b1 * a21)
            - a01 * (a10 * b2 - b1 * a20)
            + b0 * (a10 * a21 - a11 * a20)
        ) / det
    return u_L, new_integral


# ---------------------------------------------------------------------------
# controller

_STANCE = 0
_SWING = 1


class TrotController:
    """Owns per-leg trackers and turns (t, state, x_w) into u_L.

    Stance feet integrate the mirrored body command semi-implicitly in
    the body frame; swing feet follow their inertial-axis Bezier plan.
    At each diagonal switch the leg entering swing re-anchors its curve
    to the measured foot position, while the leg entering stance starts
    from the commanded swing end, so the commanded reference is
    continuous at touchdown.  PID integrators reset on every mode
    change.
    """

    def __init__(
        self,
        cfg: GaitConfig,
        params: RobotParams,
        body_gains: PdGains,
        pid: PidGains,
        state0: FullState,
        rest_depth: float = 0.0,
    ):
        self.cfg = cfg
        self.params = params
        self.body_gains = body_gains
        self.pid = pid
        # weight-bearing ground penetration per stance foot; the stance
        # z relax target sits this far below z0 so the trunk settles at
        # ride height on solidly loaded feet instead of grazing contact
        self.rest_depth = rest_depth
        self.mode = np.full(4, _STANCE)
        self.des_pos = np.empty((4, 3))
        self.des_vel = np.zeros((4, 3))
        self.des_acc = np.zeros((4, 3))
        self.integral = np.zeros((4, 3))
        self.plans: list[SwingPlan | None] = [None] * 4
        self.prev_pair: int | None = None
        self.prev_u = np.zeros(12)
        self.singular_events = 0
        q = state0.q_L
        for i in range(4):
            self.des_pos[i] = params.l_h[i] + leg_offset(*q[3 * i : 3 * i + 3])

    def _rel_foot(self, state: FullState, i: int):
        """Measured foot state relative to the body, inertial axes."""
        sl = slice(3 * i, 3 * i + 3)
        q = state.q_L[sl]
        pos = state.R_B @ (self.params.l_h[i] + leg_offset(*q))
        vel = state.R_B @ (leg_jacobian(*q) @ state.qd_L[sl])
        return pos, vel

    def _switch(self, state: FullState, ph: GaitPhase):
        for i in ph.swing_legs:
            pos, _ = self._rel_foot(state, i)
            # hip offset needs no yaw correction: this gait never yaws
            # on purpose, so l_h doubles as the inertial hip direction
            end = self.params.l_h[i] + np.array(
                [self.cfg.step_ahead, 0.0, -self.cfg.z0]
            )
            self.plans[i] = SwingPlan.from_liftoff(
                pos, end, self.cfg.swing_height, self.cfg.period
            )
            self.mode[i] = _SWING
            self.integral[i] = 0.0
        for i in ph.stance_legs:
            if self.mode[i] == _SWING:
                plan = self.plans[i]
                # touchdown continuity: the stance tracker starts exactly
                # at the commanded swing end, expressed in the body frame
                # the stance integration runs in
                self.des_pos[i] = state.R_B.T @ plan.end
                # velocity seed makes the desired point world-fixed: with
                # d''_F = -a_cmd both integrations cancel and the tracker
                # holds its ground contact instead of skating with the
                # trunk at body speed
                self.des_vel[i] = -(state.R_B.T @ state.v_B)
                self.integral[i] = 0.0
            self.mode[i] = _STANCE

    def step(self, t_gait: float, state: FullState, x_w, dt: float, settling: bool):
        """One control update; returns (u_L, a_cmd, phase)."""
        if settling:
            ph = GaitPhase(t=t_gait, pair=0, phase=0.0)
        else:
            ph = advance_phase(t_gait, self.cfg)
            if ph.pair != self.prev_pair:
                self._switch(state, ph)
                self.prev_pair = ph.pair

        R_B = state.R_B
        x_p = np.concatenate([state.p_B, state.v_B])
        a_cmd = stance_command(
            rotate_reference(x_w, R_B), rotate_reference(x_p, R_B), self.body_gains
        )

        Rt = R_B.T
        for i in range(4):
            if self.mode[i] == _STANCE:
                self.des_acc[i] = -a_cmd
                self.des_vel[i] += dt * self.des_acc[i]
                self.des_pos[i] += dt * self.des_vel[i]
                # bleed the attitude latched into the entry anchor
                self.des_pos[i, 2] += dt * _LEVEL_RATE_Z * (
                    -(self.cfg.z0 + self.rest_depth) - self.des_pos[i, 2]
                )
                self.des_pos[i, 1] += (
                    dt * _LEVEL_RATE_Y * (self.params.l_h[i][1] - self.des_pos[i, 1])
                )
            else:
                # swing curves live in inertial axes so the touchdown
                # height cannot tilt with the trunk; rotate per instant
                plan = self.plans[i]
                pos, vel = swing_target(ph.phase, plan)
                self.des_pos[i] = Rt @ pos
                self.des_vel[i] = Rt @ vel
                self.des_acc[i] = Rt @ plan.acceleration(ph.phase)

        try:
            u_L, self.integral = joints_from_feet(
                state,
                self.params,
                self.des_pos,
                self.des_vel,
                self.des_acc,
                self.pid,
                self.integral,
                dt,
            )
        except SingularLegError as err:
            logger.warning("%s; holding previous joint command", err)
            self.singular_events += 1
            u_L = self.prev_u
        self.prev_u = u_L
        return u_L, a_cmd, ph
