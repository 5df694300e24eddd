"""Rotation and small dense linear algebra kernels.

Everything here operates on plain float64 ndarrays: rotation matrices are 3x3
(body-to-inertial), angular velocities are body-frame 3-vectors, and the linear
solvers are sized for the small systems that show up in the estimator and the
governor (n <= 8).
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

# Pivot magnitude below which a system is treated as singular.
PIVOT_TOL = 1e-12
# Singular values below this fraction of sigma_max count as zero in nullspace().
NULLSPACE_RTOL = 1e-10


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a linear solve meets a pivot smaller than PIVOT_TOL."""


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix of v, so that skew(v) @ w == cross(v, w)."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(a: float) -> np.ndarray:
    """Right-handed rotation about the x axis by a radians."""
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    """Right-handed rotation about the y axis by a radians."""
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    """Right-handed rotation about the z axis by a radians."""
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def reorthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3).

    Uses the Newton iteration for the orthogonal polar factor,
    R <- R (3I - R^T R) / 2, which converges quadratically for inputs close
    to orthonormal (the post-integration case). Falls back to the SVD polar
    factor if the input is too far gone for the iteration.
    """
    R = np.asarray(R, dtype=float)
    for _ in range(5):
        E = R.T @ R
        E[0, 0] -= 1.0
        E[1, 1] -= 1.0
        E[2, 2] -= 1.0
        if np.max(np.abs(E)) <= 1e-15:
            return R
        R = R @ (np.identity(3) - 0.5 * E)
    U, _, Vt = np.linalg.svd(R)
    P = U @ Vt
    if np.linalg.det(P) < 0.0:
        # keep a proper rotation
        U[:, 2] = -U[:, 2]
        P = U @ Vt
    return P


def integrate_rotation(R: np.ndarray, omega_body, dt: float) -> np.ndarray:
    """One RK4 step of Rdot = R [omega]_x with omega held constant, then reproject.

    For constant body rates this matches R @ expm(skew(omega) * dt) to O(dt^5)
    per step.
    """
    W = skew(omega_body)
    k1 = R @ W
    k2 = (R + 0.5 * dt * k1) @ W
    k3 = (R + 0.5 * dt * k2) @ W
    k4 = (R + dt * k3) @ W
    return reorthonormalize(R + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def lu_solve_checked(A: np.ndarray, B: np.ndarray):
    """LU solve with the pivot test shared by every solver in the package.

    B may hold multiple right-hand sides as columns. Returns (X, lu, piv) so
    callers can reuse the factorization.
    """
    A = np.asarray(A, dtype=float)
    try:
        with warnings.catch_warnings():
            # the explicit pivot test below is the authoritative singularity check
            warnings.simplefilter("ignore", LinAlgWarning)
            lu, piv = lu_factor(A, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises rarely
        raise SingularMatrixError(str(exc)) from exc
    if np.min(np.abs(np.diag(lu))) < PIVOT_TOL:
        raise SingularMatrixError(
            f"pivot below {PIVOT_TOL:g} in {A.shape[0]}x{A.shape[1]} solve"
        )
    return lu_solve((lu, piv), B, check_finite=False), lu, piv


def solve_linear(A: np.ndarray, b: np.ndarray):
    """Solve A x = b for n <= 8 with partial pivoting.

    Returns (x, cond) where cond is the 1-norm condition estimate
    ||A||_1 * ||A^-1||_1 computed from the same factorization. Raises
    SingularMatrixError when a pivot magnitude drops below PIVOT_TOL.
    """
    A = np.asarray(A, dtype=float)
    x, lu, piv = lu_solve_checked(A, np.asarray(b, dtype=float))
    inv = lu_solve((lu, piv), np.identity(A.shape[0]), check_finite=False)
    cond = np.abs(A).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    return x, cond


def nullspace(C: np.ndarray, n: int = 6) -> np.ndarray:
    """Orthonormal basis of the right nullspace of C (m x n, m possibly 0).

    Returns an (n, k) array whose columns span {x : C x = 0}. Singular values
    below NULLSPACE_RTOL * sigma_max are treated as zero. An empty C yields
    the identity basis.
    """
    C = np.asarray(C, dtype=float)
    if C.size == 0:
        return np.identity(n)
    C = np.atleast_2d(C)
    _, s, Vt = np.linalg.svd(C)
    if s.size and s[0] > 0.0:
        rank = int(np.sum(s > NULLSPACE_RTOL * s[0]))
    else:
        rank = 0
    return Vt[rank:].T.copy()
