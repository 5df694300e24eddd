"""Reduced-order quadruped body dynamics with massless variable-length legs.

The body is a single rigid body (CoM at the frame origin). Each of the four
legs is massless with three joints: a hip rotation about the body y axis
(phi), a hip rotation about the rotated x axis (gamma), and a prismatic
extension r along the resulting leg axis, so the hip-to-foot vector in the
body frame is

    l_f = R_y(phi) R_x(gamma) [0, 0, -r]^T
        = (-r sin(phi) cos(gamma), r sin(gamma), -r cos(phi) cos(gamma)).

Because the legs carry no mass, joint accelerations are direct inputs
(qdd_L = u_L) and ground forces act on the body alone:

    m pdd_B     = m g + sum_i u_gi                       (inertial frame)
    I wdot_B    = -w x (I w) + sum_i l_Bi x (R^T u_gi)   (body frame)
    Rdot_B      = R [w]_x

with l_Bi the body-frame CoM-to-foot vector. The gravity torque term of the
Lagrangian formulation is identically zero here since the potential depends
on p_B only; the momentum-conservation tests check this numerically.

State is stored flat (float64, length 42) so the integrator can treat it as a
single vector:

    [0:3]   p_B   body position, inertial (m)
    [3:6]   v_B   body velocity, inertial (m/s)
    [6:15]  R_B   body-to-inertial rotation, row-major
    [15:18] w_B   angular velocity, body frame (rad/s)
    [18:30] q_L   leg joints, (phi, gamma, r) per leg, legs FL, FR, RL, RR
    [30:42] qd_L  leg joint rates
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import so3

logger = logging.getLogger(__name__)

LEG_NAMES = ("FL", "FR", "RL", "RR")
NUM_LEGS = 4
STATE_SIZE = 42

_P = slice(0, 3)
_V = slice(3, 6)
_R = slice(6, 15)
_W = slice(15, 18)
_Q = slice(18, 30)
_QD = slice(30, 42)


class NonFiniteStateError(RuntimeError):
    """Raised when integration produces NaN or infinity."""


@dataclass
class RobotParams:
    """Mass, inertia, and geometry of the reduced-order model."""

    m_B: float = 4.3
    # principal inertia of a ~0.5 x 0.3 x 0.15 m body envelope
    I_B: np.ndarray = field(
        default_factory=lambda: np.diag([0.035, 0.091, 0.100])
    )
    # hip offsets from the CoM in the body frame, legs FL, FR, RL, RR
    l_h: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [0.25, 0.15, 0.0],
                [0.25, -0.15, 0.0],
                [-0.25, 0.15, 0.0],
                [-0.25, -0.15, 0.0],
            ]
        )
    )
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    r_min: float = 0.15
    r_max: float = 0.70

    def __post_init__(self):
        self.I_B = np.asarray(self.I_B, dtype=float)
        self.l_h = np.asarray(self.l_h, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.m_B <= 0.0:
            raise ValueError("m_B must be positive")
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError("need 0 < r_min < r_max")
        if self.l_h.shape != (NUM_LEGS, 3):
            raise ValueError("l_h must be 4x3")
        if np.max(np.abs(self.I_B - self.I_B.T)) > 1e-12 or np.any(
            np.linalg.eigvalsh(self.I_B) <= 0.0
        ):
            raise ValueError("I_B must be symmetric positive definite")
        self.I_B_inv = np.linalg.inv(self.I_B)


@dataclass
class BodyState:
    p_B: np.ndarray
    v_B: np.ndarray
    R_B: np.ndarray
    w_B: np.ndarray


@dataclass
class LegJointState:
    phi: float
    gamma: float
    r: float
    phi_dot: float
    gamma_dot: float
    r_dot: float


class FullState:
    """Flat-vector state with named views. Mutating a view mutates the state."""

    __slots__ = ("x",)

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.shape != (STATE_SIZE,):
            raise ValueError(f"state vector must have length {STATE_SIZE}")
        self.x = x

    @classmethod
    def from_parts(cls, p_B, v_B, R_B, w_B, q_L, qd_L) -> "FullState":
        x = np.empty(STATE_SIZE)
        x[_P] = p_B
        x[_V] = v_B
        x[_R] = np.asarray(R_B, dtype=float).reshape(9)
        x[_W] = w_B
        x[_Q] = q_L
        x[_QD] = qd_L
        return cls(x)

    @property
    def p_B(self) -> np.ndarray:
        return self.x[_P]

    @property
    def v_B(self) -> np.ndarray:
        return self.x[_V]

    @property
    def R_B(self) -> np.ndarray:
        return self.x[_R].reshape(3, 3)

    @property
    def w_B(self) -> np.ndarray:
        return self.x[_W]

    @property
    def q_L(self) -> np.ndarray:
        return self.x[_Q]

    @property
    def qd_L(self) -> np.ndarray:
        return self.x[_QD]

    def body(self) -> BodyState:
        return BodyState(self.p_B.copy(), self.v_B.copy(), self.R_B.copy(), self.w_B.copy())

    def leg(self, i: int) -> LegJointState:
        q = self.x[18 + 3 * i : 21 + 3 * i]
        qd = self.x[30 + 3 * i : 33 + 3 * i]
        return LegJointState(q[0], q[1], q[2], qd[0], qd[1], qd[2])

    def copy(self) -> "FullState":
        return FullState(self.x.copy())


def standing_state(
    params: RobotParams, body_z: float = 0.45, leg_r: float = 0.45
) -> FullState:
    """All-legs-vertical standing pose at the given body height."""
    q = np.zeros(12)
    q[2::3] = leg_r
    return FullState.from_parts(
        [0.0, 0.0, body_z], np.zeros(3), np.identity(3), np.zeros(3), q, np.zeros(12)
    )


# ---------------------------------------------------------------------------
# leg kinematics (body frame)


def leg_offset(phi: float, gamma: float, r: float) -> np.ndarray:
    """Hip-to-foot vector in the body frame."""
    sphi, cphi = math.sin(phi), math.cos(phi)
    sg, cg = math.sin(gamma), math.cos(gamma)
    return np.array([-r * sphi * cg, r * sg, -r * cphi * cg])


def leg_jacobian(phi: float, gamma: float, r: float) -> np.ndarray:
    """d(leg_offset)/d(phi, gamma, r), body frame, columns in joint order."""
    sphi, cphi = math.sin(phi), math.cos(phi)
    sg, cg = math.sin(gamma), math.cos(gamma)
    return np.array(
        [
            [-r * cphi * cg, r * sphi * sg, -sphi * cg],
            [0.0, r * cg, sg],
            [r * sphi * cg, r * cphi * sg, -cphi * cg],
        ]
    )


def leg_velocity_product(q, qd) -> np.ndarray:
    """Jdot(q, qd) @ qd: the joint-rate-only part of the body-frame foot
    acceleration (what remains of the second derivative of leg_offset when
    the joint accelerations are zero)."""
    phi, gamma, r = q
    phid, gammad, rd = qd
    sphi, cphi = math.sin(phi), math.cos(phi)
    sg, cg = math.sin(gamma), math.cos(gamma)
    rate2 = phid * phid + gammad * gammad
    u1d = cphi * cg * phid - sphi * sg * gammad
    u2d = cg * gammad
    u3d = -sphi * cg * phid - cphi * sg * gammad
    u1dd = -sphi * cg * rate2 - 2.0 * cphi * sg * phid * gammad
    u2dd = -sg * gammad * gammad
    u3dd = -cphi * cg * rate2 + 2.0 * sphi * sg * phid * gammad
    return np.array(
        [
            -2.0 * rd * u1d - r * u1dd,
            2.0 * rd * u2d + r * u2dd,
            -2.0 * rd * u3d - r * u3dd,
        ]
    )


# ---------------------------------------------------------------------------
# world-frame foot kinematics


def foot_position(state: FullState, leg: int, params: RobotParams) -> np.ndarray:
    """Inertial foot position p_B + R_B (l_h + l_f)."""
    q = state.x[18 + 3 * leg : 21 + 3 * leg]
    l_B = params.l_h[leg] + leg_offset(q[0], q[1], q[2])
    return state.p_B + state.R_B @ l_B


def foot_velocity(state: FullState, leg: int, params: RobotParams) -> np.ndarray:
    """Inertial foot velocity, including body rotation and joint rates."""
    q = state.x[18 + 3 * leg : 21 + 3 * leg]
    qd = state.x[30 + 3 * leg : 33 + 3 * leg]
    l_B = params.l_h[leg] + leg_offset(q[0], q[1], q[2])
    rel = _cross(state.w_B, l_B) + leg_jacobian(q[0], q[1], q[2]) @ qd
    return state.v_B + state.R_B @ rel


def feet_kinematics(state: FullState, params: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """Inertial positions and velocities of all four feet in one pass.

    Same quantities as foot_position/foot_velocity per leg, batched so the
    per-call small-array overhead is paid once instead of eight times.
    """
    x = state.x
    w = state.w_B
    w0, w1, w2 = w[0], w[1], w[2]
    L = np.empty((NUM_LEGS, 3))
    Vrel = np.empty((NUM_LEGS, 3))
    for i in range(NUM_LEGS):
        j = 18 + 3 * i
        phi, gamma, r = x[j], x[j + 1], x[j + 2]
        phid, gammad, rd = x[j + 12], x[j + 13], x[j + 14]
        sphi, cphi = math.sin(phi), math.cos(phi)
        sg, cg = math.sin(gamma), math.cos(gamma)
        lh = params.l_h[i]
        l0 = lh[0] - r * sphi * cg
        l1 = lh[1] + r * sg
        l2 = lh[2] - r * cphi * cg
        L[i, 0] = l0
        L[i, 1] = l1
        L[i, 2] = l2
        jd0 = (r * sphi * sg * gammad - r * cphi * cg * phid) - sphi * cg * rd
        jd1 = r * cg * gammad + sg * rd
        jd2 = (r * sphi * cg * phid + r * cphi * sg * gammad) - cphi * cg * rd
        Vrel[i, 0] = w1 * l2 - w2 * l1 + jd0
        Vrel[i, 1] = w2 * l0 - w0 * l2 + jd1
        Vrel[i, 2] = w0 * l1 - w1 * l0 + jd2
    Rt = state.R_B.T
    return state.p_B + L @ Rt, state.v_B + Vrel @ Rt


def contact_jacobian(state: FullState, leg: int, params: RobotParams) -> np.ndarray:
    """3x6 map from body twist [v_B; w_B] to the foot velocity at fixed joints.

    Structure [I_3 | -R_B [l_h + l_f]_x]; its transpose maps a ground force
    at the foot to the generalized force on the body.
    """
    q = state.x[18 + 3 * leg : 21 + 3 * leg]
    l_B = params.l_h[leg] + leg_offset(q[0], q[1], q[2])
    B = np.empty((3, 6))
    B[:, :3] = np.identity(3)
    B[:, 3:] = -state.R_B @ so3.skew(l_B)
    return B


def _cross(a, b) -> np.ndarray:
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


# ---------------------------------------------------------------------------
# equations of motion


def _deriv(x: np.ndarray, u_L: np.ndarray, u_g: np.ndarray, params: RobotParams) -> np.ndarray:
    """State derivative; u_g is a 4x3 array of inertial foot forces."""
    out = np.empty(STATE_SIZE)
    R = x[_R].reshape(3, 3)
    w = x[_W]

    out[_P] = x[_V]
    force = u_g[0] + u_g[1] + u_g[2] + u_g[3]
    out[_V] = params.g + force / params.m_B
    out[_R] = (R @ so3.skew(w)).reshape(9)

    # GRF moments about the CoM, body frame; scalar math, this runs in the
    # innermost integration loop
    t0 = t1 = t2 = 0.0
    for i in range(NUM_LEGS):
        ui = u_g[i]
        u0, u1, u2 = ui[0], ui[1], ui[2]
        if u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
            continue
        j = 18 + 3 * i
        sphi, cphi = math.sin(x[j]), math.cos(x[j])
        sg, cg = math.sin(x[j + 1]), math.cos(x[j + 1])
        r = x[j + 2]
        lh = params.l_h[i]
        l0 = lh[0] - r * sphi * cg
        l1 = lh[1] + r * sg
        l2 = lh[2] - r * cphi * cg
        b0 = R[0, 0] * u0 + R[1, 0] * u1 + R[2, 0] * u2
        b1 = R[0, 1] * u0 + R[1, 1] * u1 + R[2, 1] * u2
        b2 = R[0, 2] * u0 + R[1, 2] * u1 + R[2, 2] * u2
        t0 += l1 * b2 - l2 * b1
        t1 += l2 * b0 - l0 * b2
        t2 += l0 * b1 - l1 * b0

    w0, w1, w2 = w[0], w[1], w[2]
    Iw = params.I_B @ w
    rhs = np.array(
        [
            t0 - (w1 * Iw[2] - w2 * Iw[1]),
            t1 - (w2 * Iw[0] - w0 * Iw[2]),
            t2 - (w0 * Iw[1] - w1 * Iw[0]),
        ]
    )
    out[_W] = params.I_B_inv @ rhs
    out[_Q] = x[_QD]
    out[_QD] = u_L
    return out


def dynamics_deriv(state: FullState, u_L, u_g, params: RobotParams) -> np.ndarray:
    """Flat state derivative (same layout as FullState.x).

    u_g may be a 4x3 array of inertial foot forces or a sequence of objects
    with an `f` attribute (one per leg).
    """
    return _deriv(state.x, np.asarray(u_L, dtype=float), _force_array(u_g), params)


def _force_array(u_g) -> np.ndarray:
    if isinstance(u_g, np.ndarray) and u_g.shape == (NUM_LEGS, 3):
        return u_g
    out = np.empty((NUM_LEGS, 3))
    for i, f in enumerate(u_g):
        out[i] = f.f if hasattr(f, "f") else f
    return out


def rk4_step(state: FullState, u_L, u_g, dt: float, params: RobotParams) -> FullState:
    """Classical RK4 step with u_L and u_g frozen across the step.

    The rotation block is integrated as a raw matrix ODE through the stages
    and reorthonormalized once at the end. Prismatic joints are clamped to
    [r_min, r_max] afterwards (with a logged warning).
    """
    u_L = np.asarray(u_L, dtype=float)
    ug = _force_array(u_g)
    x = state.x
    # a diverging state overflows inside the stages before the final
    # finiteness check can see it; report that as the same abort instead
    # of math-domain errors and FP warnings
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = _deriv(x, u_L, ug, params)
            k2 = _deriv(x + (0.5 * dt) * k1, u_L, ug, params)
            k3 = _deriv(x + (0.5 * dt) * k2, u_L, ug, params)
            k4 = _deriv(x + dt * k3, u_L, ug, params)
            xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    except ValueError as exc:
        raise NonFiniteStateError("integration produced a non-finite state") from exc

    if not np.isfinite(xn).all():
        raise NonFiniteStateError("integration produced a non-finite state")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            xn[_R] = so3.reorthonormalize(xn[_R].reshape(3, 3)).reshape(9)
    except np.linalg.LinAlgError as exc:
        # finite but astronomically large R: the polishing iteration
        # overflows and the SVD fallback cannot converge
        raise NonFiniteStateError("integration produced a non-finite state") from exc

    for i in range(NUM_LEGS):
        j = 20 + 3 * i
        if xn[j] < params.r_min:
            logger.warning("leg %s length clamped at r_min", LEG_NAMES[i])
            xn[j] = params.r_min
        elif xn[j] > params.r_max:
            logger.warning("leg %s length clamped at r_max", LEG_NAMES[i])
            xn[j] = params.r_max

    return FullState(xn)
