import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from se2bis.groups import (
    RigidMotion,
    contract,
    great_circle_distance,
    group_action_bound,
    homomorphism_defect_bound,
    plane_to_sphere,
    rotation_angle,
    so3_exp,
    sphere_to_plane,
)

finite_floats = st.floats(-3.0, 3.0, allow_nan=False)
angles = st.floats(0.0, 2.0 * math.pi - 1e-9)


def random_motion(rng, scale=2.0):
    return RigidMotion(scale * rng.standard_normal(2), rng.uniform(0, 2 * math.pi))


class TestRigidMotion:
    def test_identity_composition(self):
        g = RigidMotion(np.array([0.3, -1.2]), 1.1)
        gi = g.compose(g.inverse())
        assert np.linalg.norm(gi.b) < 1e-12
        assert min(gi.theta, 2 * math.pi - gi.theta) < 1e-12

    @given(finite_floats, finite_floats, angles, finite_floats, finite_floats, angles)
    @settings(max_examples=50, deadline=None)
    def test_composition_matches_point_action(self, b1x, b1y, t1, b2x, b2y, t2):
        g1 = RigidMotion(np.array([b1x, b1y]), t1)
        g2 = RigidMotion(np.array([b2x, b2y]), t2)
        x = np.array([0.37, -0.58])
        np.testing.assert_allclose(
            g1.compose(g2).apply(x), g1.apply(g2.apply(x)), atol=1e-12
        )

    def test_theta_normalized(self):
        assert 0 <= RigidMotion(np.zeros(2), -0.5).theta < 2 * math.pi


class TestSo3Exp:
    def test_zero_gives_identity(self):
        np.testing.assert_allclose(so3_exp(np.zeros(2)), np.eye(3), atol=1e-15)

    def test_north_pole_z_coordinate_is_cos_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal(2) * 2
            top = so3_exp(x) @ np.array([0.0, 0.0, 1.0])
            assert abs(top[2] - math.cos(np.linalg.norm(x))) < 1e-12

    def test_matches_truncated_power_series(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.standard_normal(2)
            skew = np.array(
                [[0.0, 0.0, x[0]], [0.0, 0.0, x[1]], [-x[0], -x[1], 0.0]]
            )
            series = np.eye(3)
            term = np.eye(3)
            for n in range(1, 30):
                term = term @ skew / n
                series = series + term
            np.testing.assert_allclose(so3_exp(x), series, atol=1e-12)


class TestContract:
    def test_pure_rotation_is_embedded_rotation(self):
        theta = 0.73
        g = RigidMotion(np.zeros(2), theta)
        for lam in (1.0, 3.0, 17.0):
            expected = np.array(
                [
                    [math.cos(theta), -math.sin(theta), 0.0],
                    [math.sin(theta), math.cos(theta), 0.0],
                    [0.0, 0.0, 1.0],
                ]
            )
            np.testing.assert_allclose(contract(g, lam), expected, atol=1e-15)

    def test_inverse_commutes(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            g = random_motion(rng)
            lam = rng.uniform(1.0, 8.0)
            diff = contract(g.inverse(), lam) - contract(g, lam).T
            assert np.max(np.abs(diff)) < 1e-12

    def test_orthogonal_det_one(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            g = random_motion(rng)
            lam = rng.uniform(0.5, 8.0)
            r = contract(g, lam)
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12
            assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_homomorphism_defect_bounded(self):
        rng = np.random.default_rng(4)
        for lam in (1.0, 2.0, 4.0, 8.0):
            for _ in range(250):
                g1 = random_motion(rng, scale=1.0)
                g2 = random_motion(rng, scale=1.0)
                lhs = np.linalg.norm(
                    contract(g1.compose(g2), lam) - contract(g1, lam) @ contract(g2, lam),
                    ord="fro",
                )
                bound = homomorphism_defect_bound(
                    np.linalg.norm(g1.b), np.linalg.norm(g2.b), lam
                )
                assert lhs <= bound + 1e-12

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            contract(RigidMotion.identity(), 0.0)


class TestPlaneSphereMaps:
    def test_origin_to_north_pole(self):
        np.testing.assert_allclose(plane_to_sphere(np.zeros(2), 1.0), [0, 0, 1], atol=1e-15)

    def test_radius_lambda_pi_to_south_pole(self):
        for lam in (1.0, 2.5):
            s = plane_to_sphere(np.array([lam * math.pi, 0.0]), lam)
            np.testing.assert_allclose(s, [0, 0, -1], atol=1e-12)

    def test_quarter_turn(self):
        s = plane_to_sphere(np.array([math.pi / 2, 0.0]), 1.0)
        np.testing.assert_allclose(s, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(sphere_to_plane(np.array([1.0, 0, 0]), 1.0),
                                   [math.pi / 2, 0.0], atol=1e-12)

    def test_fibers(self):
        rng = np.random.default_rng(5)
        lam = 1.3
        for n in (0, 1, 2):
            direction = rng.standard_normal(2)
            direction /= np.linalg.norm(direction)
            even = plane_to_sphere(2 * n * lam * math.pi * direction, lam)
            np.testing.assert_allclose(even, [0, 0, 1], atol=1e-10)
            odd = plane_to_sphere((2 * n + 1) * lam * math.pi * direction, lam)
            np.testing.assert_allclose(odd, [0, 0, -1], atol=1e-10)

    def test_round_trip_on_open_disc(self):
        rng = np.random.default_rng(6)
        lam = 1.7
        pts = rng.standard_normal((1000, 2))
        pts *= rng.uniform(0, 0.99 * lam * math.pi, 1000)[:, None] / np.linalg.norm(pts, axis=1)[:, None]
        np.testing.assert_allclose(sphere_to_plane(plane_to_sphere(pts, lam), lam), pts, atol=1e-12)

    def test_sphere_round_trip(self):
        rng = np.random.default_rng(7)
        s = rng.standard_normal((500, 3))
        s /= np.linalg.norm(s, axis=1)[:, None]
        s = s[s[:, 2] > -0.99]
        np.testing.assert_allclose(plane_to_sphere(sphere_to_plane(s, 2.0), 2.0), s, atol=1e-12)

    def test_south_pole_rejected(self):
        with pytest.raises(ValueError, match="south"):
            sphere_to_plane(np.array([0.0, 0.0, -1.0]), 1.0)

    def test_pure_rotation_exactness(self):
        # mapping a rotated plane point equals rotating the mapped point
        rng = np.random.default_rng(8)
        for _ in range(100):
            x = rng.standard_normal(2)
            theta = rng.uniform(0, 2 * math.pi)
            lam = rng.uniform(1.0, 4.0)
            g = RigidMotion(np.zeros(2), theta)
            lhs = plane_to_sphere(g.apply(x), lam)
            rhs = contract(g, lam) @ plane_to_sphere(x, lam)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestBounds:
    def test_defect_constant_zero_at_origin(self):
        assert homomorphism_defect_bound(0.0, 0.0, 5.0) == 0.0

    def test_defect_constant_closed_form(self):
        assert abs(homomorphism_defect_bound(1.0, 0.0, 1.0) - (math.e - 2.0)) < 1e-14

    def test_defect_monotone_in_first_argument(self):
        grid = np.linspace(0, 3, 200)
        vals = [homomorphism_defect_bound(r, 0.7, 2.0) for r in grid]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))

    def test_defect_rejects_small_lambda(self):
        with pytest.raises(ValueError):
            homomorphism_defect_bound(1.0, 1.0, 0.5)

    def test_action_bound_zero_lipschitz(self):
        assert group_action_bound(0.0, 1.0, 1.0, 2.0) == 0.0

    def test_action_bound_vanishes_at_large_scaling(self):
        vals = [group_action_bound(1.0, 0.5, 1.0, lt) for lt in (1.0, 10.0, 100.0, 1000.0)]
        assert vals[-1] < 1e-3 * vals[0]
        assert vals[-1] < 1e-4

    def test_action_bound_rejects_bad_order(self):
        with pytest.raises(ValueError):
            group_action_bound(1.0, 1.0, 2.0, 1.0)

    def test_metric_comparison(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((100_000, 3))
        x /= np.linalg.norm(x, axis=1)[:, None]
        y = rng.standard_normal((100_000, 3))
        y /= np.linalg.norm(y, axis=1)[:, None]
        lhs = great_circle_distance(x, y)
        rhs = math.sqrt(math.pi) * np.linalg.norm(x - y, axis=1)
        assert np.all(lhs <= rhs + 1e-12)

    def test_rotation_angle(self):
        assert rotation_angle(np.eye(3)) == 0.0
        flip = np.diag([1.0, -1.0, -1.0])
        assert abs(rotation_angle(flip) - math.pi) < 1e-12


def test_action_bound_dominates_measured_mismatch(image0, cg16, quad16):
    """The L2 mismatch of act-then-project vs project-then-rotate stays under the bound."""
    from se2bis.harmonics import ShCoefficients, synthesize
    from se2bis.inversion import rotate_shc
    from se2bis.projection import apply_rigid_motion, build_projection_operator

    lam, lam_tilde = 1.0, 2.0
    op = build_projection_operator(16, quad16, lam_tilde, image0.n)
    g = RigidMotion(np.array([0.05, -0.03]), 0.9)
    moved = apply_rigid_motion(image0, g)
    lhs_coeffs = op.apply(moved)
    f = ShCoefficients(16, op.apply(image0))
    rotated = rotate_shc(f, contract(g, lam_tilde), quad16)
    measured = np.linalg.norm(lhs_coeffs - rotated.coeffs)

    # sampled estimate of the Lipschitz constant of the projected function
    theta, phi = quad16.angles()
    vals = synthesize(f, theta, phi).real
    pts = quad16.points
    rng = np.random.default_rng(10)
    idx = rng.integers(0, len(pts), size=(4000, 2))
    d = great_circle_distance(pts[idx[:, 0]], pts[idx[:, 1]])
    keep = d > 1e-3
    lipschitz = float(np.max(np.abs(vals[idx[keep, 0]] - vals[idx[keep, 1]]) / d[keep]))

    bound = group_action_bound(lipschitz, float(np.linalg.norm(g.b)), lam, lam_tilde)
    assert measured <= bound
