"""Explicit reference governor over affine constraint rows.

The governor evolves the applied reference x_w toward the desired
reference x_r under the row constraints h(x) = J_r x + d_r >= 0 of a
frozen :class:`~ergsim.grf.ConstraintSystem`.  Per step the velocity is
assembled from three fields, gated by where x_w and x_r sit relative to
the constraint set:

* attraction  v_r = alpha_r (x_r - x_w), active when x_r is feasible
  (x_w chases it directly) or x_w is feasible;
* tangential  v_t = alpha_t N N^T (x_r - x_w), active when x_w is
  feasible but x_r is not; N spans the nullspace of the rows x_r
  violates, so this component skims along the violated boundary;
* normal      v_n = +/- alpha_n r r^T (x_r - x_w) with r the unit row
  at argmin h_w, active when both are infeasible; the sign pushes x_w
  back toward the boundary, or away from x_r when x_r is deeper in.

A raw Euler step of that law can overshoot a boundary by O(dt), which
shows up as chatter around h = 0.  The step is therefore filtered:
truncate at the first boundary crossing, slide the remaining fraction
inside the tangent space of the rows hit so far, and reject slides that
would raise the tracking energy V = (x_r - x_w)^T P (x_r - x_w) when the
step started feasible.  Feasible iterates then stay feasible to
roundoff, and fixed points of the filtered flow are the constrained
minimizers of V.
"""

from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np

from .grf import ConstraintSystem

__all__ = [
    "BRANCH_DISABLED",
    "BRANCH_ATTRACT",
    "BRANCH_TANGENT",
    "BRANCH_NORMAL_IN",
    "BRANCH_NORMAL_OUT",
    "ErgGains",
    "ErgState",
    "ErgDiagnostics",
    "erg_step",
    "lyapunov_value",
    "restore_feasibility",
]

BRANCH_DISABLED = -1  # governor bypassed (x_w follows x_r verbatim)
BRANCH_ATTRACT = 0
BRANCH_TANGENT = 1
BRANCH_NORMAL_IN = 2  # both infeasible, moving toward the boundary
BRANCH_NORMAL_OUT = 3  # both infeasible, backing away from x_r

# |h| below this counts as "on the boundary" when deciding whether a row
# blocks the step; keeps roundoff-negative rows from slipping through
_EDGE_TOL = 1e-12

_MAX_RESTORE_ITER = 40


@dataclasses.dataclass
class ErgGains:
    """Update-law rates, Lyapunov weight, and governor step size.

    constraint_margin is an optional inflation applied by the harness:
    every row is tightened by the margin before the governor sees it, so
    the applied reference keeps that much slack from the true boundary.
    erg_step itself works on whatever rows it is handed.
    """

    alpha_r: float = 50.0
    alpha_t: float = 50.0
    alpha_n: float = 50.0
    P: np.ndarray = dataclasses.field(default_factory=lambda: np.eye(6))
    dt: float = 1e-3
    constraint_margin: float = 0.0

    def __post_init__(self):
        for name in ("alpha_r", "alpha_t", "alpha_n"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.constraint_margin < 0.0:
            raise ValueError("constraint_margin must be nonnegative")
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (6, 6):
            raise ValueError("P must be 6x6")
        if not np.allclose(self.P, self.P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        if np.linalg.eigvalsh(self.P)[0] <= 0.0:
            raise ValueError("P must be positive definite")


@dataclasses.dataclass
class ErgState:
    """Per-rollout governor bookkeeping (applied reference + last step)."""

    x_w: np.ndarray
    h_r: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(6))
    h_w: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(6))
    branch: int = BRANCH_DISABLED


class ErgDiagnostics(NamedTuple):
    branch: int
    h_r_min: float
    h_w_min: float
    V: float
    speed: float  # ||x_w' - x_w|| / dt, after filtering
    truncated: bool  # step hit at least one boundary
    v_r: np.ndarray
    v_t: np.ndarray
    v_n: np.ndarray


def lyapunov_value(x_r, x_w, P) -> float:
    e = np.asarray(x_r, dtype=float) - np.asarray(x_w, dtype=float)
    return float(e @ P @ e)


def _cone_project(cs: ConstraintSystem, rem, wall_mask: int):
    """Projection of rem onto the tangent cone {u : J_j u >= 0, j in walls}.

    Active-set enumeration over subsets of the hit rows: each candidate
    is the orthogonal projection onto that subset's tangent space, and
    among candidates that do not descend into any hit wall the longest
    one is the cone projection (orthogonality gives ||rem - u||^2 =
    ||rem||^2 - ||u||^2).  Projecting onto the tangent *space* of every
    hit row instead would pin rows the optimum wants to release and can
    stall the slide short of the constrained minimum.
    """
    bits = [j for j in range(cs.J_r.shape[0]) if wall_mask >> j & 1]
    A = cs.J_r[bits]
    scale = _EDGE_TOL * np.maximum(cs.row_norms[bits], 1.0)
    if np.all(A @ rem >= -scale):
        return rem
    best = np.zeros_like(rem)
    best_n2 = 0.0
    for pick in range(1, 1 << len(bits)):
        sub = 0
        for i, j in enumerate(bits):
            if pick >> i & 1:
                sub |= 1 << j
        N = cs.nullspace_of_rows(sub)
        u = N @ (N.T @ rem)
        n2 = float(u @ u)
        if n2 > best_n2 and np.all(A @ u >= -scale):
            best = u
            best_n2 = n2
    return best


def _filtered_advance(cs: ConstraintSystem, x_w, v, dt):
    """Euler step truncated at constraint boundaries.

    Moves x_w by dt*v but stops at the first currently-satisfied row the
    segment would cross, then slides the leftover fraction inside the
    tangent cone of the rows hit so far.  Rows that are already violated
    never block (the update law is what restores them).
    Returns (x_new, first_hit_point_or_None).
    """
    x = x_w + dt * v
    rem = x - x_w
    if not rem.any():
        return x_w.copy(), None
    x = x_w.copy()
    first_hit = None
    wall_mask = 0
    for _ in range(cs.J_r.shape[0] + 1):
        h = cs.h(x)
        dh = cs.J_r @ rem
        lam = 1.0
        hit = -1
        for j in range(cs.J_r.shape[0]):
            if wall_mask >> j & 1 or dh[j] >= 0.0 or h[j] < -_EDGE_TOL:
                continue
            lam_j = max(h[j], 0.0) / -dh[j]
            if lam_j < lam:
                lam = lam_j
                hit = j
        x = x + lam * rem
        if hit < 0:
            break
        if first_hit is None:
            first_hit = x.copy()
        wall_mask |= 1 << hit
        rem = _cone_project(cs, (1.0 - lam) * rem, wall_mask)
        if np.dot(rem, rem) < 1e-30:
            break
    return x, first_hit


def _descent_step(cs: ConstraintSystem, x_w, x_r, gains: ErgGains):
    """Wall-projected attraction step with a strict descent guarantee.

    Projects alpha_r*(x_r - x_w) once onto the tangent cone of the rows
    x_w currently sits on, then clips the Euler step at the first
    crossing of any other satisfied row.  A single cone projection u of
    the attraction field keeps u.(x_r - x_w) = |u|^2/alpha_r >= 0, so V
    strictly decreases for every nonzero (even clipped) step while
    alpha_r*dt < 2, and the fixed points are exactly the KKT
    projections of x_r onto the feasible set.
    """
    d = x_r - x_w
    h = cs.h(x_w)
    # rows within this band count as walls the step must respect; the
    # clip below parks iterates on faces only to roundoff, so the band
    # is fat relative to that but far inside every outer tolerance
    edge = 1e-9 * np.maximum(cs.row_norms, 1.0)
    mask = 0
    for j in range(h.shape[0]):
        if h[j] <= edge[j]:
            mask |= 1 << j
    u = gains.alpha_r * d
    if mask:
        u = _cone_project(cs, u, mask)
    if np.dot(u, u) < 1e-30:
        return x_w.copy()
    step = gains.dt * u
    dh = cs.J_r @ step
    lam = 1.0
    for j in range(h.shape[0]):
        if mask >> j & 1 or dh[j] >= 0.0:
            continue
        lam = min(lam, max(h[j], 0.0) / -dh[j])
    return x_w + lam * step


def erg_step(cs: ConstraintSystem, x_r, x_w, gains: ErgGains):
    """One governor update; returns (x_w', diagnostics).

    Branch selection is exclusive on the sign pattern of
    (min h_w, min h_r); the tangential branch keeps attraction active.
    """
    x_r = np.asarray(x_r, dtype=float)
    x_w = np.asarray(x_w, dtype=float)
    h_r = cs.h(x_r)
    h_w = cs.h(x_w)
    d = x_r - x_w
    # boundary iterates produced by the step filter land within roundoff
    # of h = 0; classifying them as infeasible would fire the normal
    # branch and re-introduce chatter, so feasibility gets a tiny band
    w_feasible = h_w.min() >= -_EDGE_TOL
    r_feasible = h_r.min() >= -_EDGE_TOL

    v_r = np.zeros(6)
    v_t = np.zeros(6)
    v_n = np.zeros(6)
    if r_feasible:
        branch = BRANCH_ATTRACT
        v_r = gains.alpha_r * d
    elif w_feasible:
        branch = BRANCH_TANGENT
        v_r = gains.alpha_r * d
        mask = 0
        for j in range(h_r.shape[0]):
            if h_r[j] < 0.0:
                mask |= 1 << j
        N = cs.nullspace_of_rows(mask)
        v_t = gains.alpha_t * (N @ (N.T @ d))
    else:
        k_min = int(np.argmin(h_w))  # lowest index on ties
        nrm = cs.row_norms[k_min]
        if nrm > 0.0:
            r_hat = cs.J_r[k_min] / nrm
            v_n = gains.alpha_n * r_hat * (r_hat @ d)
            if h_r[k_min] >= h_w[k_min]:
                branch = BRANCH_NORMAL_IN
            else:
                branch = BRANCH_NORMAL_OUT
                v_n = -v_n
        else:
            branch = BRANCH_NORMAL_IN

    x_new, first_hit = _filtered_advance(cs, x_w, v_r + v_t + v_n, gains.dt)

    if w_feasible and first_hit is not None:
        # starting feasible, the step must not raise V.  The tangential
        # term can point uphill once the slide is wall-filtered (its
        # nullspace comes from the rows x_r violates, not the local
        # walls), and chained wedge projections lose the descent
        # property too; fall back to wall-projected attraction, which
        # descends strictly whenever it moves and parks exactly at the
        # constrained minimum.
        V0 = lyapunov_value(x_r, x_w, gains.P)
        if lyapunov_value(x_r, x_new, gains.P) > V0 * (1.0 + 1e-12) + 1e-15:
            x_new = _descent_step(cs, x_w, x_r, gains)

    speed = float(np.linalg.norm(x_new - x_w)) / gains.dt
    diag = ErgDiagnostics(
        branch=branch,
        h_r_min=float(h_r.min()),
        h_w_min=float(h_w.min()),
        V=lyapunov_value(x_r, x_new, gains.P),
        speed=speed,
        truncated=first_hit is not None,
        v_r=v_r,
        v_t=v_t,
        v_n=v_n,
    )
    return x_new, diag


def restore_feasibility(cs: ConstraintSystem, x_w, x_p, margin: float = 1e-9):
    """Minimal correction of x_w after the constraint rows moved.

    The constraint system is rebuilt from fresh stance geometry every
    simulation step, so a previously feasible x_w can land outside the
    new rows.  Cyclic projection onto the violated half-spaces finds the
    nearby feasible point; if that stalls (empty or needle-thin set),
    fall back to the measured state x_p.
    """
    x = np.asarray(x_w, dtype=float).copy()
    for _ in range(_MAX_RESTORE_ITER):
        h = cs.h(x)
        j = int(np.argmin(h))
        if h[j] >= 0.0:
            return x
        nrm2 = cs.row_norms[j] ** 2
        if nrm2 <= 0.0:
            break
        x += ((margin - h[j]) / nrm2) * cs.J_r[j]
    return np.asarray(x_p, dtype=float).copy()
