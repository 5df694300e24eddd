"""Stance ground-force estimate and no-slip constraint extraction.

During a trot exactly two diagonal feet support the body. Treating the body
as a point mass commanded by the stance PD law, the two unknown foot forces
(6 scalars) are fixed by six linear conditions:

  * Newton balance with the commanded acceleration:
        u_g1 + u_g2 = m K (x_ref - x_p) - m g,   K = [K_p  K_d]
  * equal lateral components:            u_g1,y = u_g2,y
  * vertical moment balance about the CoM ground projection:
        d1 u_g1,z = d2 u_g2,z
  * in-plane moment balance along e_g:   d1 e_g.u_g1 = d2 e_g.u_g2

where d1, d2 are the horizontal distances from the CoM projection to the
front and rear foot and e_g is the ground-plane unit normal of the support
line. Stacking per-foot friction-pyramid and minimum-load rows

    h = [-sgn(u_x) u_x + mu_s u_z,  -sgn(u_y) u_y + mu_s u_z,  u_z - f_z_min]

gives h >= 0 exactly when the commanded forces are transmissible. Because
the forces are affine in the reference x_ref once the sgn terms are frozen,
h(x) = J_r x + d_r; extract_affine recovers J_r and d_r by evaluating the
frozen-sign rows at 0 and at the six basis vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3
from .contact import GroundForce

_MIN_SUPPORT_SPAN = 1e-9
_EYE6 = np.identity(6)


class DegenerateSupportError(RuntimeError):
    """Support geometry admits no unique force split (coincident feet,
    support line parallel to x, or a singular stacked system)."""


@dataclass
class PdGains:
    """Body-tracking PD gains; K is the stacked 3x6 [K_p K_d]."""

    K_p: np.ndarray = field(default_factory=lambda: 30.0 * np.identity(3))
    K_d: np.ndarray = field(default_factory=lambda: 8.0 * np.identity(3))

    def __post_init__(self):
        self.K_p = np.asarray(self.K_p, dtype=float)
        self.K_d = np.asarray(self.K_d, dtype=float)
        for M in (self.K_p, self.K_d):
            if M.shape != (3, 3) or np.any(np.linalg.eigvalsh(0.5 * (M + M.T)) <= 0.0):
                raise ValueError("PD gain blocks must be 3x3 positive definite")
        self.K = np.hstack([self.K_p, self.K_d])


@dataclass
class StanceGeometry:
    """Body state plus the two stance feet (1 = front, 2 = rear)."""

    p_B: np.ndarray
    v_B: np.ndarray
    p_F1: np.ndarray
    p_F2: np.ndarray
    d1: float = field(init=False)
    d2: float = field(init=False)
    e_g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.p_B = np.asarray(self.p_B, dtype=float)
        self.v_B = np.asarray(self.v_B, dtype=float)
        self.p_F1 = np.asarray(self.p_F1, dtype=float)
        self.p_F2 = np.asarray(self.p_F2, dtype=float)
        cx = self.p_F1[0] - self.p_F2[0]
        cy = self.p_F1[1] - self.p_F2[1]
        span = np.hypot(cx, cy)
        if span < _MIN_SUPPORT_SPAN:
            raise DegenerateSupportError("stance feet coincide in the ground plane")
        tx, ty = cx / span, cy / span
        # horizontal CoM projection onto the support segment; clamping keeps
        # d1, d2 >= 0 when the CoM drifts past an endpoint (all load on the
        # nearer foot, the physical limit)
        s = (self.p_B[0] - self.p_F2[0]) * tx + (self.p_B[1] - self.p_F2[1]) * ty
        s = min(max(s, 0.0), span)
        self.d1 = span - s
        self.d2 = s
        self.e_g = np.array([-ty, tx, 0.0])

    @property
    def x_p(self) -> np.ndarray:
        """Measured body state stacked as [p_B; v_B]."""
        return np.concatenate([self.p_B, self.v_B])


@dataclass
class ConstraintSystem:
    """Frozen-sign affine constraint h(x) = J_r x + d_r >= 0."""

    J_r: np.ndarray
    d_r: np.ndarray
    mu_s: float
    f_z_min: float
    sign_snapshot: np.ndarray  # (s1x, s1y, s2x, s2y) at the freeze point
    force_offset: np.ndarray  # stacked [u_g1; u_g2] at x_ref = 0
    force_map: np.ndarray  # d[u_g1; u_g2]/dx_ref, 6x6

    def __post_init__(self):
        self.row_norms = np.linalg.norm(self.J_r, axis=1)
        self._null_cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_rows(cls, J_r, d_r) -> "ConstraintSystem":
        """Bare affine system J_r x + d_r >= 0 with no force bookkeeping;
        for governor-level work where only the rows matter."""
        J_r = np.asarray(J_r, dtype=float)
        d_r = np.asarray(d_r, dtype=float)
        n = J_r.shape[0]
        return cls(
            J_r=J_r,
            d_r=d_r,
            mu_s=0.0,
            f_z_min=0.0,
            sign_snapshot=np.zeros(4),
            force_offset=np.zeros(n),
            force_map=np.zeros((n, J_r.shape[1])),
        )

    def h(self, x_ref) -> np.ndarray:
        return self.J_r @ x_ref + self.d_r

    def forces(self, x_ref) -> np.ndarray:
        """Stacked [u_g1; u_g2] under the frozen affine model."""
        return self.force_offset + self.force_map @ x_ref

    def nullspace_of_rows(self, mask: int) -> np.ndarray:
        """Orthonormal basis of the nullspace of the rows selected by the
        bitmask; cached, since the governor may ask for the same active set
        thousands of times against one system."""
        basis = self._null_cache.get(mask)
        if basis is None:
            rows = [k for k in range(self.J_r.shape[0]) if mask >> k & 1]
            basis = so3.nullspace(self.J_r[rows], n=self.J_r.shape[1])
            self._null_cache[mask] = basis
        return basis


def _build_system(geom: StanceGeometry) -> np.ndarray:
    A = np.zeros((6, 6))
    A[0, 0] = A[0, 3] = 1.0
    A[1, 1] = A[1, 4] = 1.0
    A[2, 2] = A[2, 5] = 1.0
    A[3, 1] = 1.0
    A[3, 4] = -1.0
    A[4, 2] = geom.d1
    A[4, 5] = -geom.d2
    A[5, :3] = geom.d1 * geom.e_g
    A[5, 3:] = -geom.d2 * geom.e_g
    return A


def _net_force(geom: StanceGeometry, gains: PdGains, x_ref, m_B: float, g) -> np.ndarray:
    """m K (x_ref - x_p) - m g: required sum of the two stance forces."""
    return m_B * (gains.K @ (np.asarray(x_ref, dtype=float) - geom.x_p)) - m_B * np.asarray(g)


def estimate_grf(
    geom: StanceGeometry, gains: PdGains, x_ref, m_B: float, g
) -> tuple[GroundForce, GroundForce]:
    """Solve the stacked 6x6 system for the two stance forces."""
    A = _build_system(geom)
    b = np.zeros(6)
    b[:3] = _net_force(geom, gains, x_ref, m_B, g)
    try:
        w, _ = so3.solve_linear(A, b)
    except so3.SingularMatrixError as exc:
        raise DegenerateSupportError(str(exc)) from exc
    return GroundForce(w[:3], True), GroundForce(w[3:], True)


def _sign(v: float) -> float:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


def _pyramid_rows(w: np.ndarray, signs, mu_s: float, f_z_min: float) -> np.ndarray:
    """Six constraint rows for stacked forces w = [u_g1; u_g2]."""
    h = np.empty(6)
    h[0] = -signs[0] * w[0] + mu_s * w[2]
    h[1] = -signs[1] * w[1] + mu_s * w[2]
    h[2] = w[2] - f_z_min
    h[3] = -signs[2] * w[3] + mu_s * w[5]
    h[4] = -signs[3] * w[4] + mu_s * w[5]
    h[5] = w[5] - f_z_min
    return h


def constraint_values(u_g1, u_g2, mu_s: float, f_z_min: float) -> np.ndarray:
    """h >= 0 iff both forces fit the friction pyramid and minimum load.

    Rows: foot 1 (x pyramid, y pyramid, minimum normal force), then foot 2.
    """
    u_g1 = u_g1.f if isinstance(u_g1, GroundForce) else np.asarray(u_g1, dtype=float)
    u_g2 = u_g2.f if isinstance(u_g2, GroundForce) else np.asarray(u_g2, dtype=float)
    w = np.concatenate([u_g1, u_g2])
    signs = (_sign(w[0]), _sign(w[1]), _sign(w[3]), _sign(w[4]))
    return _pyramid_rows(w, signs, mu_s, f_z_min)


def extract_affine(
    geom: StanceGeometry,
    gains: PdGains,
    m_B: float,
    g,
    mu_s: float,
    f_z_min: float,
    x_freeze,
) -> ConstraintSystem:
    """Freeze the pyramid sgn terms at x_freeze and return h(x) = J_r x + d_r.

    The forces are affine in x_ref, so J_r is recovered exactly from seven
    evaluations (origin plus the six basis vectors), all sharing one LU
    factorization.
    """
    A = _build_system(geom)
    # columns: x_freeze, 0, e_1 .. e_6
    X = np.zeros((6, 8))
    X[:, 0] = np.asarray(x_freeze, dtype=float)
    X[:, 2:] = _EYE6
    c0 = -m_B * (gains.K @ geom.x_p) - m_B * np.asarray(g, dtype=float)
    B = np.zeros((6, 8))
    B[:3] = m_B * (gains.K @ X) + c0[:, None]
    try:
        U, _, _ = so3.lu_solve_checked(A, B)
    except so3.SingularMatrixError as exc:
        raise DegenerateSupportError(str(exc)) from exc

    w_freeze = U[:, 0]
    signs = np.array(
        [_sign(w_freeze[0]), _sign(w_freeze[1]), _sign(w_freeze[3]), _sign(w_freeze[4])]
    )
    # with signs frozen the pyramid map is linear: h = M w + c
    M = np.zeros((6, 6))
    M[0, 0] = -signs[0]
    M[1, 1] = -signs[1]
    M[3, 3] = -signs[2]
    M[4, 4] = -signs[3]
    M[0, 2] = M[1, 2] = M[3, 5] = M[4, 5] = mu_s
    M[2, 2] = M[5, 5] = 1.0
    force_offset = U[:, 1].copy()
    force_map = U[:, 2:] - force_offset[:, None]
    d_r = M @ force_offset
    d_r[2] -= f_z_min
    d_r[5] -= f_z_min
    return ConstraintSystem(
        J_r=M @ force_map,
        d_r=d_r,
        mu_s=mu_s,
        f_z_min=f_z_min,
        sign_snapshot=signs,
        force_offset=force_offset,
        force_map=force_map,
    )
