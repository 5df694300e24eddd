"""Compliant ground with a Stribeck sliding-friction model.

The ground is the z = 0 plane. A foot at height z <= 0 sees a spring-damper
normal force and a velocity-dependent tangential force per horizontal axis:

    f_z = max(0, -k_gz z - k_dz zdot)
    s   = mu_c - (mu_c - mu_s) exp(-v^2 / v_s^2)
    f_t = -s f_z sgn(v) - mu_v v

so the tangential magnitude falls from the static level mu_s f_z at rest
toward the Coulomb level mu_c f_z as the slide speed passes v_s, plus a small
viscous term. The normal force is clamped at zero: the ground never pulls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GroundParams:
    k_gz: float = 8000.0  # N/m
    k_dz: float = 300.0  # N s/m
    mu_s: float = 0.2
    mu_c: float | None = None  # defaults to 0.9 * mu_s
    mu_v: float = 0.1  # N s/m
    v_s: float = 0.01  # m/s

    def __post_init__(self):
        if self.mu_c is None:
            self.mu_c = 0.9 * self.mu_s
        if self.k_gz <= 0.0 or self.k_dz <= 0.0:
            raise ValueError("ground stiffness and damping must be positive")
        if not (0.0 < self.mu_c <= self.mu_s):
            raise ValueError("need 0 < mu_c <= mu_s")
        if self.mu_v < 0.0 or self.v_s <= 0.0:
            raise ValueError("mu_v must be >= 0 and v_s > 0")


@dataclass
class GroundForce:
    f: np.ndarray = field(default_factory=lambda: np.zeros(3))
    in_contact: bool = False


def _sgn(v: float) -> float:
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


def ground_force(foot_pos, foot_vel, params: GroundParams) -> GroundForce:
    """Inertial ground force on one foot; zero force above the plane."""
    z = float(foot_pos[2])
    if z > 0.0:
        return GroundForce()
    vx, vy, vz = float(foot_vel[0]), float(foot_vel[1]), float(foot_vel[2])
    fz = -params.k_gz * z - params.k_dz * vz
    if fz <= 0.0:
        return GroundForce(np.zeros(3), True)
    mu_c, mu_s = params.mu_c, params.mu_s
    inv_vs2 = 1.0 / (params.v_s * params.v_s)
    sx = mu_c - (mu_c - mu_s) * math.exp(-vx * vx * inv_vs2)
    sy = mu_c - (mu_c - mu_s) * math.exp(-vy * vy * inv_vs2)
    fx = -sx * fz * _sgn(vx) - params.mu_v * vx
    fy = -sy * fz * _sgn(vy) - params.mu_v * vy
    return GroundForce(np.array([fx, fy, fz]), True)
