"""Release gate: every supported claim measured against its threshold.

Each criterion is a standalone function returning a CriterionResult so
failures show the measured value, the threshold it was held to, and a
short detail string -- not just a boolean.  run_all executes the full
list (fast mode shrinks the randomized instance counts, nothing else)
and is what `ergsim check` runs.

Randomized criteria draw from fixed-seed generators: reruns are
bit-identical.  The Lyapunov criterion checks the governor against an
independent active-set enumeration oracle built on lstsq, sharing no
code with the update law it judges.
"""

from __future__ import annotations

import dataclasses
import math
from time import perf_counter

import numpy as np

from .config import make_config
from .dynamics import (
    RobotParams,
    contact_jacobian,
    foot_velocity,
    leg_jacobian,
    leg_offset,
    rk4_step,
    standing_state,
)
from . import so3
from .governor import ErgGains, erg_step, lyapunov_value
from .grf import (
    ConstraintSystem,
    PdGains,
    StanceGeometry,
    constraint_values,
    estimate_grf,
    extract_affine,
)
from .simulate import run

__all__ = ["CriterionResult", "run_all"]


@dataclasses.dataclass
class CriterionResult:
    ident: str
    passed: bool
    measured: str
    threshold: str
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        out = (
            f"{tag}  {self.ident:24s} measured {self.measured}"
            f"  vs  {self.threshold}  [{self.seconds:.1f}s]"
        )
        if self.detail:
            out += f"  ({self.detail})"
        return out


def _result(ident, passed, measured, threshold, t0, detail=""):
    return CriterionResult(
        ident=ident,
        passed=bool(passed),
        measured=measured,
        threshold=threshold,
        seconds=perf_counter() - t0,
        detail=detail,
    )


# ---------------------------------------------------------------------------
# headline scenario (criteria 1-5 share its two rollouts)


def _headline_pair():
    t0 = perf_counter()
    cfg_on = make_config({"ground.mu_s": "0.2"})
    log_on, m_on = run(cfg_on)
    wall = perf_counter() - t0
    cfg_off = make_config({"ground.mu_s": "0.2", "erg_enabled": "false"})
    _, m_off = run(cfg_off)
    return cfg_on, log_on, m_on, wall, m_off


def _crit_stability(cfg, log, metrics, wall):
    t0 = perf_counter()
    ok = (not metrics.fall) and 0.10 <= metrics.mean_speed <= 0.30 and wall <= 60.0
    return _result(
        "slippery_stability",
        ok,
        f"fall={metrics.fall} speed={metrics.mean_speed:.3f} m/s wall={wall:.1f} s",
        "no fall, speed in [0.10, 0.30], wall <= 60 s",
        t0,
    )


def _crit_governor_floor(metrics):
    t0 = perf_counter()
    return _result(
        "governor_floor",
        metrics.min_h_w >= -1e-6,
        f"min h_w = {metrics.min_h_w:.3e}",
        ">= -1e-6",
        t0,
    )


def _crit_friction_containment(cfg, log):
    t0 = perf_counter()
    d = log.data[: log.n]
    t = d[:, 0]
    f = d[:, log.SLICES["f_true"]].reshape(-1, 4, 3)
    sel = t >= 0.3
    fx = np.abs(f[sel, :, 0])
    fy = np.abs(f[sel, :, 1])
    fz = f[sel, :, 2]
    stance = fz > 0.0
    mu_s = cfg.ground.mu_s
    inside = (fx <= mu_s * fz + 0.5) & (fy <= mu_s * fz + 0.5)
    frac = float(inside[stance].mean()) if stance.any() else 1.0
    return _result(
        "friction_containment",
        frac >= 0.99,
        f"inside-pyramid fraction = {frac:.5f}",
        ">= 0.99 of stance samples after 0.3 s",
        t0,
    )


def _crit_throughput(metrics):
    t0 = perf_counter()
    return _result(
        "throughput",
        metrics.steps_per_second >= 2000.0,
        f"{metrics.steps_per_second:.0f} steps/s",
        ">= 2000 steps/s",
        t0,
    )


def _crit_ablation(m_on, m_off):
    t0 = perf_counter()
    return _result(
        "ablation_ordering",
        m_off.violation_count > m_on.violation_count,
        f"violations: governed {m_on.violation_count}, raw {m_off.violation_count}",
        "raw strictly greater",
        t0,
    )


# ---------------------------------------------------------------------------
# force solver and constraint extraction


def _random_geometry(rng) -> StanceGeometry:
    p_B = np.array(
        [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.25, 0.75)]
    )
    v_B = rng.uniform(-0.5, 0.5, 3)
    # front foot ahead, rear behind; span bounded away from degenerate
    p_F1 = np.array([p_B[0] + rng.uniform(0.1, 0.45), p_B[1] + rng.uniform(-0.3, 0.3), 0.0])
    p_F2 = np.array([p_B[0] - rng.uniform(0.1, 0.45), p_B[1] + rng.uniform(-0.3, 0.3), 0.0])
    return StanceGeometry(p_B=p_B, v_B=v_B, p_F1=p_F1, p_F2=p_F2)


def _crit_grf_solver(n):
    t0 = perf_counter()
    rng = np.random.default_rng(2024)
    gains = PdGains()
    m_B = 4.3
    g = np.array([0.0, 0.0, -9.81])
    worst = 0.0
    for _ in range(n):
        geom = _random_geometry(rng)
        x_ref = geom.x_p + rng.uniform(-0.2, 0.2, 6)
        u1, u2 = estimate_grf(geom, gains, x_ref, m_B, g)
        net = m_B * (gains.K @ (x_ref - geom.x_p)) - m_B * g
        res = np.max(np.abs(u1.f + u2.f - net))
        res = max(res, abs(u1.f[1] - u2.f[1]))
        res = max(res, abs(geom.d1 * u1.f[2] - geom.d2 * u2.f[2]))
        worst = max(worst, res)
    return _result(
        "grf_solver",
        worst <= 1e-9,
        f"max residual {worst:.2e} over {n} instances",
        "<= 1e-9 (balance, y-share, moment)",
        t0,
    )


def _crit_affine_extraction(n_inst, n_x):
    t0 = perf_counter()
    rng = np.random.default_rng(77)
    gains = PdGains()
    m_B = 4.3
    g = np.array([0.0, 0.0, -9.81])
    mu_s = 0.4
    f_z_min = 1.0
    worst = 0.0
    checked = 0
    for _ in range(n_inst):
        geom = _random_geometry(rng)
        x0 = geom.x_p + rng.uniform(-0.1, 0.1, 6)
        cs = extract_affine(geom, gains, m_B, g, mu_s, f_z_min, x0)
        u1, u2 = estimate_grf(geom, gains, x0, m_B, g)
        ref_signs = np.sign([u1.f[0], u1.f[1], u2.f[0], u2.f[1]])
        kept = 0
        attempts = 0
        while kept < n_x and attempts < 40 * n_x:
            attempts += 1
            x = x0 + rng.uniform(-0.02, 0.02, 6)
            v1, v2 = estimate_grf(geom, gains, x, m_B, g)
            signs = np.sign([v1.f[0], v1.f[1], v2.f[0], v2.f[1]])
            if not np.array_equal(signs, ref_signs):
                continue  # left the frozen-sign cell; not a valid probe
            direct = constraint_values(v1, v2, mu_s, f_z_min)
            worst = max(worst, float(np.max(np.abs(direct - cs.h(x)))))
            kept += 1
            checked += 1
    return _result(
        "affine_extraction",
        worst <= 1e-9 and checked >= n_inst * n_x // 2,
        f"max |h_direct - (J x + d)| = {worst:.2e} over {checked} probes",
        "<= 1e-9 in the frozen-sign region",
        t0,
    )


# ---------------------------------------------------------------------------
# governor Lyapunov property vs an independent oracle


def _oracle_min_V(J, d, x_r):
    """Least-energy feasible point by active-set enumeration (P = I).

    Minimize ||x - x_r||^2 subject to J x + d >= 0 by trying every
    subset of rows as the active set: the equality-constrained optimum
    is the lstsq correction onto that face.  Feasible candidates keep
    the smallest objective.  Exponential in rows, fine for <= 6.
    """
    h_r = J @ x_r + d
    if h_r.min() >= 0.0:
        return 0.0
    m = J.shape[0]
    best = math.inf
    for mask in range(1, 1 << m):
        rows = [j for j in range(m) if mask >> j & 1]
        A = J[rows]
        b = -(d[rows] + A @ x_r)
        dx, *_ = np.linalg.lstsq(A, b, rcond=None)
        x = x_r + dx
        if np.min(J @ x + d) >= -1e-9:
            best = min(best, float(dx @ dx))
    return best


def _crit_erg_lyapunov(n, gains: ErgGains | None = None):
    t0 = perf_counter()
    rng = np.random.default_rng(4242)
    if gains is None:
        gains = ErgGains(dt=1e-3)
    max_steps = 100_000
    bad = 0
    worst_detail = ""
    for k in range(n):
        m = int(rng.integers(1, 7))
        J = rng.normal(size=(m, 6))
        x_w = rng.uniform(-1.0, 1.0, 6)
        d = -(J @ x_w) + rng.uniform(0.0, 1.0, m)  # h(x_w) >= 0 by construction
        cs = ConstraintSystem.from_rows(J, d)
        x_r = rng.uniform(-2.0, 2.0, 6)

        V_prev = lyapunov_value(x_r, x_w, gains.P)
        monotone = True
        converged = False
        for _ in range(max_steps):
            x_next, diag = erg_step(cs, x_r, x_w, gains)
            # h_w_min is evaluated at the pre-step point; V at the new one
            if diag.h_w_min >= 0.0 and diag.V > V_prev * (1.0 + 1e-12) + 1e-15:
                monotone = False
            x_w = x_next
            V_prev = diag.V
            if diag.speed < 1e-6:
                converged = True
                break
        feasible = np.min(cs.h(x_r)) >= 0.0
        if feasible:
            target_ok = np.linalg.norm(x_w - x_r) <= 1e-4
        else:
            target_ok = abs(np.min(cs.h(x_w))) <= 1e-3
        V_end = lyapunov_value(x_r, x_w, gains.P)
        V_star = _oracle_min_V(J, d, x_r)
        energy_ok = V_end <= 1.05 * V_star + 1e-8
        if not (monotone and converged and target_ok and energy_ok):
            bad += 1
            if not worst_detail:
                worst_detail = (
                    f"first failure at instance {k}: monotone={monotone} "
                    f"converged={converged} target={target_ok} "
                    f"V={V_end:.3e} vs oracle {V_star:.3e}"
                )
    return _result(
        "erg_lyapunov",
        bad == 0,
        f"{bad}/{n} instances failed",
        "V non-increasing, converges, within 5% of oracle",
        t0,
        detail=worst_detail,
    )


# ---------------------------------------------------------------------------
# numerics


def _crit_integrator(n_orth):
    t0 = perf_counter()
    params = RobotParams()
    zero_L = np.zeros(12)
    zero_g = np.zeros((4, 3))

    def final_R(n):
        s = standing_state(params)
        s.w_B[:] = [2.0, 1.0, -1.5]
        for _ in range(n):
            s = rk4_step(s, zero_L, zero_g, 1.0 / n, params)
        return s.R_B

    ref = final_R(256)
    e1 = np.max(np.abs(final_R(8) - ref))
    e2 = np.max(np.abs(final_R(16) - ref))
    ratio = e1 / e2

    s = standing_state(params)
    s.w_B[:] = [3.0, -2.0, 4.0]
    drift = 0.0
    for _ in range(n_orth):
        s = rk4_step(s, zero_L, zero_g, 1e-3, params)
        R = s.R_B
        drift = max(drift, float(np.max(np.abs(R.T @ R - np.identity(3)))))

    s = standing_state(params, body_z=2.0)
    v0 = np.array([0.3, -0.1, 0.8])
    s.v_B[:] = v0
    p0 = s.p_B.copy()
    for _ in range(1000):
        s = rk4_step(s, zero_L, zero_g, 1e-3, params)
    ball = float(np.max(np.abs(s.p_B - (p0 + v0 + 0.5 * params.g))))

    ok = ratio >= 14.0 and drift <= 1e-9 and ball <= 1e-9
    return _result(
        "integrator",
        ok,
        f"order ratio {ratio:.1f}, orthonormality drift {drift:.1e}, ballistic {ball:.1e}",
        "ratio >= 14, drift <= 1e-9/step, ballistic <= 1e-9 over 1 s",
        t0,
    )


def _random_state(rng, params):
    s = standing_state(params)
    s.p_B[:] = rng.uniform(-1.0, 1.0, 3)
    s.v_B[:] = rng.uniform(-1.0, 1.0, 3)
    R = so3.rot_z(rng.uniform(-np.pi, np.pi)) @ so3.rot_y(rng.uniform(-0.5, 0.5))
    s.R_B[:] = R @ so3.rot_x(rng.uniform(-0.5, 0.5))
    s.w_B[:] = rng.uniform(-2.0, 2.0, 3)
    for i in range(4):
        s.q_L[3 * i] = rng.uniform(-0.6, 0.6)
        s.q_L[3 * i + 1] = rng.uniform(-0.6, 0.6)
        s.q_L[3 * i + 2] = rng.uniform(params.r_min + 0.05, params.r_max - 0.05)
    s.qd_L[:] = rng.uniform(-1.0, 1.0, 12)
    return s


def _crit_jacobians(n):
    t0 = perf_counter()
    rng = np.random.default_rng(99)
    params = RobotParams()
    eps = 1e-6
    worst = 0.0
    for _ in range(n):
        phi = rng.uniform(-0.8, 0.8)
        gamma = rng.uniform(-0.8, 0.8)
        r = rng.uniform(params.r_min + 0.05, params.r_max - 0.05)
        J = leg_jacobian(phi, gamma, r)
        q = np.array([phi, gamma, r])
        for k in range(3):
            qp, qm = q.copy(), q.copy()
            qp[k] += eps
            qm[k] -= eps
            fd = (leg_offset(*qp) - leg_offset(*qm)) / (2 * eps)
            den = max(1.0, float(np.max(np.abs(fd))))
            worst = max(worst, float(np.max(np.abs(J[:, k] - fd))) / den)

        s = _random_state(rng, params)
        leg = int(rng.integers(0, 4))
        B = contact_jacobian(s, leg, params)
        for k in range(6):
            sp, sm = s.copy(), s.copy()
            (sp.v_B if k < 3 else sp.w_B)[k % 3] += eps
            (sm.v_B if k < 3 else sm.w_B)[k % 3] -= eps
            fd = (foot_velocity(sp, leg, params) - foot_velocity(sm, leg, params)) / (2 * eps)
            den = max(1.0, float(np.max(np.abs(fd))))
            worst = max(worst, float(np.max(np.abs(B[:, k] - fd))) / den)
    return _result(
        "jacobians",
        worst <= 1e-6,
        f"max relative FD mismatch {worst:.2e} over {n} states",
        "<= 1e-6 central differences",
        t0,
    )


# ---------------------------------------------------------------------------


def run_all(fast: bool = False) -> list[CriterionResult]:
    """Every criterion in order; fast mode only shrinks instance counts."""
    n_big = 200 if fast else 1000
    n_inst = 20 if fast else 100
    n_x = 20 if fast else 100
    n_states = 30 if fast else 100

    cfg, log, m_on, wall, m_off = _headline_pair()
    results = [
        _crit_stability(cfg, log, m_on, wall),
        _crit_governor_floor(m_on),
        _crit_friction_containment(cfg, log),
        _crit_throughput(m_on),
        _crit_ablation(m_on, m_off),
        _crit_grf_solver(n_big),
        _crit_affine_extraction(n_inst, n_x),
        _crit_erg_lyapunov(n_big),
        _crit_integrator(500 if fast else 2000),
        _crit_jacobians(n_states),
    ]
    return results
