"""Reference-governor tests.

Convergence targets are checked against a brute-force oracle that
enumerates every active subset of the constraint rows and solves the
equality-constrained projection in closed form, which is independent of
the update law under test.
"""

import numpy as np
import pytest

from ergsim.governor import (
    BRANCH_ATTRACT,
    BRANCH_NORMAL_IN,
    BRANCH_NORMAL_OUT,
    BRANCH_TANGENT,
    ErgGains,
    erg_step,
    lyapunov_value,
    restore_feasibility,
)
from ergsim.grf import ConstraintSystem


def random_instance(rng, n_rows=6):
    """Unit-norm rows with a strictly feasible anchor point."""
    J = rng.normal(size=(n_rows, 6))
    J /= np.linalg.norm(J, axis=1, keepdims=True)
    x0 = rng.normal(scale=0.5, size=6)
    margin = rng.uniform(0.1, 1.0, size=n_rows)
    return ConstraintSystem.from_rows(J, margin - J @ x0), x0


def min_energy_feasible(J, d, x_r, tol=1e-9):
    """Projection of x_r onto {x : Jx + d >= 0} by active-set enumeration."""
    m = J.shape[0]
    best_x, best_v = None, np.inf
    for mask in range(1 << m):
        rows = [k for k in range(m) if mask >> k & 1]
        if rows:
            Js, ds = J[rows], d[rows]
            G = Js @ Js.T
            try:
                lam = np.linalg.solve(G, Js @ x_r + ds)
            except np.linalg.LinAlgError:
                continue
            x = x_r - Js.T @ lam
        else:
            x = x_r.copy()
        if (J @ x + d).min() >= -tol:
            v = float((x - x_r) @ (x - x_r))
            if v < best_v:
                best_x, best_v = x, v
    return best_x, best_v


def run_to_convergence(cs, x_r, x_w, gains, max_steps=100_000, speed_tol=1e-6):
    diag = None
    for i in range(max_steps):
        x_w, diag = erg_step(cs, x_r, x_w, gains)
        if diag.speed < speed_tol:
            return x_w, diag, i + 1
    return x_w, diag, max_steps


GAINS = ErgGains(alpha_r=1.0, alpha_t=1.0, alpha_n=1.0, dt=0.05)


# ---------------------------------------------------------------------------
# update law basics


def test_lyapunov_value():
    x = np.arange(6.0)
    assert lyapunov_value(x, x, np.eye(6)) == 0.0
    e1 = np.zeros(6)
    e1[0] = 1.0
    assert lyapunov_value(x + e1, x, np.eye(6)) == pytest.approx(1.0)
    P = np.diag([4.0, 1, 1, 1, 1, 1])
    assert lyapunov_value(x + e1, x, P) == pytest.approx(4.0)


def test_attraction_step_is_exact_euler():
    rng = np.random.default_rng(3)
    cs, x0 = random_instance(rng)
    e1 = np.zeros(6)
    e1[0] = 1.0
    gains = ErgGains(alpha_r=1.0, alpha_t=1.0, alpha_n=1.0, dt=0.001)
    x_r = x0 + 0.05 * e1
    if cs.h(x_r).min() < 0.05:  # keep the segment clear of boundaries
        pytest.skip("unlucky geometry")
    x_new, diag = erg_step(cs, x_r, x0, gains)
    assert diag.branch == BRANCH_ATTRACT
    assert not diag.truncated
    assert np.allclose(x_new - x0, 0.001 * 0.05 * e1, atol=1e-15)


def test_feasible_target_reached_is_fixed_point():
    rng = np.random.default_rng(5)
    cs, x0 = random_instance(rng)
    x_new, diag = erg_step(cs, x0, x0, GAINS)
    assert np.array_equal(x_new, x0)
    assert diag.speed == 0.0
    assert diag.V == 0.0


def test_branch_matches_sign_pattern():
    rng = np.random.default_rng(11)
    seen = set()
    for _ in range(400):
        cs, x0 = random_instance(rng)
        x_w = x0 + rng.normal(scale=rng.uniform(0.0, 2.0), size=6)
        x_r = x0 + rng.normal(scale=rng.uniform(0.0, 2.0), size=6)
        w_feas = cs.h(x_w).min() >= 0
        r_feas = cs.h(x_r).min() >= 0
        _, diag = erg_step(cs, x_r, x_w, GAINS)
        if r_feas:
            assert diag.branch == BRANCH_ATTRACT
        elif w_feas:
            assert diag.branch == BRANCH_TANGENT
        else:
            assert diag.branch in (BRANCH_NORMAL_IN, BRANCH_NORMAL_OUT)
        seen.add(diag.branch)
    assert {BRANCH_ATTRACT, BRANCH_TANGENT}.issubset(seen)
    assert seen & {BRANCH_NORMAL_IN, BRANCH_NORMAL_OUT}


def test_tangential_component_annihilated_by_violated_rows():
    rng = np.random.default_rng(13)
    hits = 0
    while hits < 100:
        cs, x0 = random_instance(rng)
        x_r = x0 + rng.normal(scale=1.5, size=6)
        h_r = cs.h(x_r)
        if h_r.min() >= 0:
            continue
        _, diag = erg_step(cs, x_r, x0, GAINS)
        assert diag.branch == BRANCH_TANGENT
        C_r = cs.J_r[h_r < 0]
        assert np.max(np.abs(C_r @ diag.v_t)) <= 1e-9
        hits += 1


def test_step_from_boundary_confined_to_row_tangent_plane():
    # x_w sits on one boundary and x_r violates exactly that row: the
    # applied step may not re-enter the violated half-space
    rng = np.random.default_rng(17)
    done = 0
    while done < 50:
        cs, x0 = random_instance(rng)
        J1 = cs.J_r[1]
        x_b = x0 - (cs.h(x0)[1] / (J1 @ J1)) * J1  # project onto row 1
        h_b = cs.h(x_b)
        if min(h_b[k] for k in range(6) if k != 1) < 0.05 or abs(h_b[1]) > 1e-9:
            continue
        tangent = rng.normal(size=6)
        tangent -= (tangent @ J1) / (J1 @ J1) * J1
        x_r = x_b - 0.5 * J1 / np.linalg.norm(J1) + 0.1 * tangent
        h_r = cs.h(x_r)
        if h_r[1] >= 0 or min(h_r[k] for k in range(6) if k != 1) < 0:
            continue
        x_new, diag = erg_step(cs, x_r, x_b, GAINS)
        assert diag.branch == BRANCH_TANGENT
        assert diag.truncated
        assert abs(J1 @ (x_new - x_b)) <= 1e-9
        assert cs.h(x_new).min() >= -1e-9
        done += 1


def test_normal_branch_signs_and_direction():
    # single-row system: h = x[0] + 0
    J = np.zeros((1, 6))
    J[0, 0] = 1.0
    cs = ConstraintSystem.from_rows(J, np.zeros(1))
    x_w = np.zeros(6)
    x_w[0] = -0.5
    gains = ErgGains(alpha_r=1.0, alpha_t=1.0, alpha_n=1.0, dt=0.01)

    x_r = np.zeros(6)
    x_r[0] = -0.1  # less violated than x_w
    x_new, diag = erg_step(cs, x_r, x_w, gains)
    assert diag.branch == BRANCH_NORMAL_IN
    assert cs.h(x_new)[0] > cs.h(x_w)[0]

    x_r[0] = -2.0  # deeper than x_w: back away, still toward boundary
    x_new, diag = erg_step(cs, x_r, x_w, gains)
    assert diag.branch == BRANCH_NORMAL_OUT
    assert cs.h(x_new)[0] > cs.h(x_w)[0]
    assert lyapunov_value(x_r, x_new, gains.P) > lyapunov_value(x_r, x_w, gains.P)


# ---------------------------------------------------------------------------
# step-level guarantees


def test_feasibility_preserved_for_any_step_size():
    rng = np.random.default_rng(19)
    for _ in range(300):
        cs, x0 = random_instance(rng)
        x_r = x0 + rng.normal(scale=rng.uniform(0.1, 3.0), size=6)
        gains = ErgGains(
            alpha_r=rng.uniform(25.0, 75.0),
            alpha_t=rng.uniform(25.0, 75.0),
            alpha_n=rng.uniform(25.0, 75.0),
            dt=float(10.0 ** rng.uniform(-3, 0)),
        )
        x_new, _ = erg_step(cs, x_r, x0, gains)
        assert cs.h(x_new).min() >= -1e-9


def test_lyapunov_nonincreasing_while_feasible():
    rng = np.random.default_rng(23)
    for _ in range(40):
        cs, x0 = random_instance(rng)
        x_r = x0 + rng.normal(scale=1.0, size=6)
        x_w = x0.copy()
        for _ in range(200):
            feasible_before = cs.h(x_w).min() >= 0
            V_before = lyapunov_value(x_r, x_w, GAINS.P)
            x_w, diag = erg_step(cs, x_r, x_w, GAINS)
            if feasible_before:
                assert diag.V <= V_before * (1 + 1e-9) + 1e-12


# ---------------------------------------------------------------------------
# convergence against the enumeration oracle


def test_converges_to_feasible_target():
    rng = np.random.default_rng(29)
    done = 0
    while done < 30:
        cs, x0 = random_instance(rng)
        x_r = x0 + rng.normal(scale=0.3, size=6)
        if cs.h(x_r).min() < 0:
            continue
        x_w, diag, steps = run_to_convergence(cs, x_r, x0.copy(), GAINS)
        assert steps < 100_000
        assert np.linalg.norm(x_w - x_r) <= 1e-5
        done += 1


def test_converges_to_minimum_energy_projection():
    rng = np.random.default_rng(31)
    done = 0
    while done < 30:
        cs, x0 = random_instance(rng)
        x_r = x0 + rng.normal(scale=2.0, size=6)
        if cs.h(x_r).min() >= 0:
            continue
        x_w, diag, steps = run_to_convergence(cs, x_r, x0.copy(), GAINS)
        assert steps < 100_000
        assert abs(cs.h(x_w).min()) <= 1e-3
        _, V_star = min_energy_feasible(cs.J_r, cs.d_r, x_r)
        V_end = lyapunov_value(x_r, x_w, GAINS.P)
        assert V_end >= V_star - 1e-9  # cannot beat the true projection
        assert V_end <= 1.05 * V_star + 1e-12
        done += 1


# ---------------------------------------------------------------------------
# feasibility restoration


def test_restore_feasibility_keeps_feasible_point():
    rng = np.random.default_rng(37)
    cs, x0 = random_instance(rng)
    out = restore_feasibility(cs, x0, np.zeros(6))
    assert np.array_equal(out, x0)


def test_restore_feasibility_minimal_projection():
    # axis-aligned rows: single-row violations restore independently
    cs = ConstraintSystem.from_rows(np.eye(6), np.zeros(6))
    x = np.ones(6)
    x[2] = -0.3
    out = restore_feasibility(cs, x, np.zeros(6))
    assert cs.h(out).min() >= 0
    assert np.linalg.norm(out - x) <= 0.3 + 1e-6
    assert np.allclose(out[[0, 1, 3, 4, 5]], 1.0)


def test_restore_feasibility_falls_back_to_measured_state():
    J = np.zeros((2, 6))
    J[0, 0] = 1.0
    J[1, 0] = -1.0
    cs = ConstraintSystem.from_rows(J, np.array([-1.0, -1.0]))  # empty set
    x_p = np.full(6, 7.0)
    out = restore_feasibility(cs, np.zeros(6), x_p)
    assert np.array_equal(out, x_p)


def test_gains_validation():
    with pytest.raises(ValueError):
        ErgGains(alpha_r=0.0)
    with pytest.raises(ValueError):
        ErgGains(dt=-1e-3)
    with pytest.raises(ValueError):
        ErgGains(P=np.diag([1.0, 1, 1, 1, 1, -1]))
    P = np.eye(6)
    P[0, 1] = 0.5
    with pytest.raises(ValueError):
        ErgGains(P=P)
