"""Stance-force estimator tests.

The solved forces are checked against physics the solver never sees stated
in that form: Newton balance with the commanded acceleration, lateral
equality, moment balance about the CoM projection, and label symmetry. The
affine extraction is checked against direct re-evaluation of the nonlinear
constraint rows.
"""

import numpy as np
import pytest

from ergsim.grf import (
    ConstraintSystem,
    DegenerateSupportError,
    PdGains,
    StanceGeometry,
    constraint_values,
    estimate_grf,
    extract_affine,
)

M_B = 4.3
G = np.array([0.0, 0.0, -9.81])
MU_S = 0.2
F_Z_MIN = 1.0


def diagonal_geometry(p_B=(0.0, 0.0, 0.45), v_B=(0.0, 0.0, 0.0)):
    return StanceGeometry(
        p_B=np.array(p_B, dtype=float),
        v_B=np.array(v_B, dtype=float),
        p_F1=np.array([0.25, 0.15, 0.0]),
        p_F2=np.array([-0.25, -0.15, 0.0]),
    )


def random_geometry(rng):
    p_F1 = np.array([rng.uniform(0.1, 0.4), rng.uniform(0.05, 0.3), 0.0])
    p_F2 = np.array([rng.uniform(-0.4, -0.1), rng.uniform(-0.3, -0.05), 0.0])
    p_B = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.05, 0.05), rng.uniform(0.3, 0.6)])
    v_B = rng.normal(scale=0.3, size=3)
    return StanceGeometry(p_B=p_B, v_B=v_B, p_F1=p_F1, p_F2=p_F2)


def random_gains(rng):
    return PdGains(
        K_p=np.diag(rng.uniform(5.0, 60.0, size=3)),
        K_d=np.diag(rng.uniform(1.0, 20.0, size=3)),
    )


# ---------------------------------------------------------------------------
# force estimate


def test_static_symmetric_stance_splits_weight():
    geom = diagonal_geometry()
    assert geom.d1 == pytest.approx(geom.d2)
    f1, f2 = estimate_grf(geom, PdGains(), geom.x_p, M_B, G)
    half_weight = M_B * 9.81 / 2
    for f in (f1, f2):
        assert f.in_contact
        assert f.f[2] == pytest.approx(half_weight, rel=1e-12)
        assert abs(f.f[0]) < 1e-12 and abs(f.f[1]) < 1e-12


def test_solution_satisfies_defining_physics():
    rng = np.random.default_rng(61)
    for _ in range(1000):
        geom = random_geometry(rng)
        gains = random_gains(rng)
        x_ref = geom.x_p + rng.normal(scale=0.2, size=6)
        f1, f2 = estimate_grf(geom, gains, x_ref, M_B, G)
        u1, u2 = f1.f, f2.f
        # Newton balance against the commanded acceleration (sign oracle)
        lhs = u1 + u2
        rhs = M_B * (gains.K @ (x_ref - geom.x_p)) - M_B * G
        assert np.max(np.abs(lhs - rhs)) <= 1e-9
        assert abs(u1[1] - u2[1]) <= 1e-9
        assert abs(geom.d1 * u1[2] - geom.d2 * u2[2]) <= 1e-9
        assert abs(geom.d1 * geom.e_g @ u1 - geom.d2 * geom.e_g @ u2) <= 1e-9


def test_vertical_split_follows_moment_balance():
    # CoM shifted toward foot 1: foot 1 must carry the larger share,
    # in the ratio given by the lever arms
    geom = diagonal_geometry(p_B=(0.12, 0.05, 0.45))
    f1, f2 = estimate_grf(geom, PdGains(), geom.x_p, M_B, G)
    total = M_B * 9.81
    assert geom.d1 < geom.d2
    assert f1.f[2] > f2.f[2]
    assert f1.f[2] == pytest.approx(total * geom.d2 / (geom.d1 + geom.d2), rel=1e-12)
    assert f2.f[2] == pytest.approx(total * geom.d1 / (geom.d1 + geom.d2), rel=1e-12)


def test_relabeling_feet_swaps_forces():
    rng = np.random.default_rng(67)
    for _ in range(50):
        geom = random_geometry(rng)
        gains = random_gains(rng)
        x_ref = geom.x_p + rng.normal(scale=0.1, size=6)
        f1, f2 = estimate_grf(geom, gains, x_ref, M_B, G)
        swapped = StanceGeometry(
            p_B=geom.p_B, v_B=geom.v_B, p_F1=geom.p_F2, p_F2=geom.p_F1
        )
        g1, g2 = estimate_grf(swapped, gains, x_ref, M_B, G)
        assert np.allclose(g1.f, f2.f, atol=1e-9)
        assert np.allclose(g2.f, f1.f, atol=1e-9)


def test_coincident_feet_degenerate():
    with pytest.raises(DegenerateSupportError):
        StanceGeometry(
            p_B=np.array([0.0, 0.0, 0.45]),
            v_B=np.zeros(3),
            p_F1=np.array([0.1, 0.0, 0.0]),
            p_F2=np.array([0.1, 0.0, 0.0]),
        )


def test_support_line_along_x_degenerate():
    # lateral-equality row duplicates the in-plane moment row here
    geom = StanceGeometry(
        p_B=np.array([0.0, 0.0, 0.45]),
        v_B=np.zeros(3),
        p_F1=np.array([0.3, 0.0, 0.0]),
        p_F2=np.array([-0.2, 0.0, 0.0]),
    )
    with pytest.raises(DegenerateSupportError):
        estimate_grf(geom, PdGains(), geom.x_p, M_B, G)


def test_com_projection_clamped_to_segment():
    geom = diagonal_geometry(p_B=(0.6, 0.4, 0.45))
    assert geom.d1 == pytest.approx(0.0)
    assert geom.d2 == pytest.approx(np.hypot(0.5, 0.3))


# ---------------------------------------------------------------------------
# constraint rows


def test_constraint_rows_pure_vertical():
    h = constraint_values([0.0, 0.0, 20.0], [0.0, 0.0, 20.0], MU_S, F_Z_MIN)
    assert np.allclose(h, [4.0, 4.0, 19.0, 4.0, 4.0, 19.0], atol=1e-12)


def test_constraint_rows_boundary_and_violation():
    # |u_x| = mu_s u_z sits exactly on the pyramid face
    h = constraint_values([4.0, 0.0, 20.0], [0.0, 0.0, 20.0], MU_S, F_Z_MIN)
    assert h[0] == pytest.approx(0.0, abs=1e-12)
    # and past it goes negative by the excess
    h = constraint_values([-5.0, 0.0, 20.0], [0.0, 0.0, 20.0], MU_S, F_Z_MIN)
    assert h[0] == pytest.approx(-1.0)
    assert np.min(h) < 0.0


def test_constraint_rows_zero_tangential_sign():
    h = constraint_values([0.0, 0.0, 0.5], [0.0, 0.0, 0.5], MU_S, F_Z_MIN)
    assert h[2] == pytest.approx(-0.5)  # below minimum load


# ---------------------------------------------------------------------------
# affine extraction


def test_affine_matches_direct_rows_in_frozen_region():
    rng = np.random.default_rng(71)
    checked = 0
    while checked < 100:
        geom = random_geometry(rng)
        gains = random_gains(rng)
        x_freeze = geom.x_p + rng.normal(scale=0.15, size=6)
        cs = extract_affine(geom, gains, M_B, G, MU_S, F_Z_MIN, x_freeze)
        for _ in range(10):
            x = x_freeze + rng.normal(scale=0.05, size=6)
            f1, f2 = estimate_grf(geom, gains, x, M_B, G)
            w = np.concatenate([f1.f, f2.f])
            signs = np.sign([w[0], w[1], w[3], w[4]])
            if not np.array_equal(signs, cs.sign_snapshot):
                continue  # left the frozen-sign region
            direct = constraint_values(f1, f2, MU_S, F_Z_MIN)
            assert np.max(np.abs(cs.h(x) - direct)) <= 1e-9
            assert np.max(np.abs(cs.forces(x) - w)) <= 1e-9
            checked += 1


def test_gain_scaling_doubles_slope_not_gravity():
    geom = diagonal_geometry(p_B=(0.05, -0.02, 0.42), v_B=(0.1, 0.0, 0.0))
    g1 = PdGains()
    g2 = PdGains(K_p=2 * g1.K_p, K_d=2 * g1.K_d)
    x_freeze = geom.x_p
    cs1 = extract_affine(geom, g1, M_B, G, MU_S, F_Z_MIN, x_freeze)
    cs2 = extract_affine(geom, g2, M_B, G, MU_S, F_Z_MIN, x_freeze)
    assert np.allclose(cs2.J_r, 2.0 * cs1.J_r, atol=1e-9)
    # h(x_p) is the static-balance row set: gain-independent
    static1 = cs1.h(geom.x_p)
    static2 = cs2.h(geom.x_p)
    assert np.allclose(static1, static2, atol=1e-9)


def test_freeze_at_measured_state_reproduces_static_rows():
    geom = diagonal_geometry()
    cs = extract_affine(geom, PdGains(), M_B, G, MU_S, F_Z_MIN, geom.x_p)
    f1, f2 = estimate_grf(geom, PdGains(), geom.x_p, M_B, G)
    expected = constraint_values(f1, f2, MU_S, F_Z_MIN)
    assert np.allclose(cs.h(geom.x_p), expected, atol=1e-9)
    half_weight = M_B * 9.81 / 2
    assert np.allclose(
        expected,
        [
            MU_S * half_weight,
            MU_S * half_weight,
            half_weight - F_Z_MIN,
            MU_S * half_weight,
            MU_S * half_weight,
            half_weight - F_Z_MIN,
        ],
        atol=1e-9,
    )


def test_nullspace_cache_consistency():
    # offset reference: nonzero tangential forces, so the friction rows
    # are independent of the load rows
    geom = diagonal_geometry(p_B=(0.03, -0.02, 0.45), v_B=(0.1, 0.05, 0.0))
    x_freeze = geom.x_p + np.array([0.05, 0.02, -0.01, 0.1, 0.0, 0.0])
    cs = extract_affine(geom, PdGains(), M_B, G, MU_S, F_Z_MIN, x_freeze)
    mask = 0b000101
    N = cs.nullspace_of_rows(mask)
    assert N.shape == (6, 4)
    assert np.max(np.abs(cs.J_r[[0, 2]] @ N)) < 1e-9
    assert cs.nullspace_of_rows(mask) is N
