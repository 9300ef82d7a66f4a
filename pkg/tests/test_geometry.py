"""Homography estimation, application, and planar pose recovery tests."""

import numpy as np
import pytest

from cloudtrack.errors import (
    DegenerateHomography,
    DegenerateQuad,
    InsufficientCorrespondences,
    PointAtInfinity,
)
from cloudtrack.geometry import (
    Homography,
    Intrinsics,
    RansacConfig,
    apply_homography,
    apply_homography_points,
    estimate_homography_ransac,
    estimate_rigid_update,
    homography_to_pose,
    points_in_quad,
    quad_center,
    quad_from_size,
)


def _random_homography(rng):
    """Well-conditioned random projective transform (similarity + mild tilt)."""
    angle = rng.uniform(-0.5, 0.5)
    scale = rng.uniform(0.7, 1.4)
    c, s = np.cos(angle), np.sin(angle)
    m = np.array(
        [
            [scale * c, -scale * s, rng.uniform(-50, 50)],
            [scale * s, scale * c, rng.uniform(-50, 50)],
            [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
        ]
    )
    return Homography(m)


class TestApply:
    def test_identity(self):
        p = apply_homography(Homography.identity(), (10.0, 20.0))
        assert p == pytest.approx((10.0, 20.0))

    def test_translation(self):
        p = apply_homography(Homography.translation(5.0, -3.0), (0.0, 0.0))
        assert p == pytest.approx((5.0, -3.0))

    def test_uniform_scale(self):
        p = apply_homography(Homography.scale(2.0), (7.0, 9.0))
        assert p == pytest.approx((14.0, 18.0))

    def test_point_at_infinity(self):
        m = np.eye(3)
        m[2] = [1.0, 0.0, 0.0]  # w = x, vanishes at x=0
        with pytest.raises(PointAtInfinity):
            apply_homography(Homography(m), (0.0, 5.0))

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            h = _random_homography(rng)
            pts = rng.uniform(-100, 100, (30, 2))
            back = apply_homography_points(h.inverse(), apply_homography_points(h, pts))
            assert np.abs(back - pts).max() < 1e-6


class TestRansac:
    def test_exact_identity_four_points(self):
        pts = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
        h, mask = estimate_homography_ransac(pts, pts, RansacConfig(min_inliers=4))
        assert np.abs(h.m - np.eye(3)).max() < 1e-9
        assert mask.all()

    def test_recovers_h_under_outliers(self):
        rng = np.random.default_rng(11)
        h_true = _random_homography(rng)
        src = rng.uniform(0, 600, (100, 2))
        dst = apply_homography_points(h_true, src)
        n_out = 30
        out_idx = rng.choice(100, n_out, replace=False)
        dst[out_idx] = rng.uniform(0, 600, (n_out, 2))
        h, mask = estimate_homography_ransac(src, dst, rng=rng)
        inlier_idx = np.setdiff1d(np.arange(100), out_idx)
        proj = apply_homography_points(h, src[inlier_idx])
        assert np.sqrt(((proj - dst[inlier_idx]) ** 2).sum(axis=1)).max() < 1.0
        assert mask[inlier_idx].mean() > 0.95

    def test_three_points_rejected(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(InsufficientCorrespondences):
            estimate_homography_ransac(pts, pts)

    def test_too_few_consensus_rejected(self):
        rng = np.random.default_rng(2)
        src = rng.uniform(0, 100, (12, 2))
        dst = rng.uniform(0, 100, (12, 2))  # unrelated: no consensus of 8
        with pytest.raises(InsufficientCorrespondences):
            estimate_homography_ransac(src, dst, rng=rng)

    def test_similarity_invariance(self):
        # common similarity applied to both sides leaves the map conjugated,
        # so reprojection of transformed sources matches transformed targets
        rng = np.random.default_rng(5)
        h_true = _random_homography(rng)
        src = rng.uniform(0, 400, (40, 2))
        dst = apply_homography_points(h_true, src)
        sim = Homography(
            np.array([[0.8, -0.6, 10.0], [0.6, 0.8, -20.0], [0.0, 0.0, 1.0]]) @ np.diag([2.0, 2.0, 1.0])
        )
        src_t = apply_homography_points(sim, src)
        dst_t = apply_homography_points(sim, dst)
        h2, _ = estimate_homography_ransac(src_t, dst_t, rng=np.random.default_rng(0))
        proj = apply_homography_points(h2, src_t)
        assert np.abs(proj - dst_t).max() < 1e-6


class TestRigidUpdate:
    def test_stationary_points(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 500, (40, 2))
        h = estimate_rigid_update(pts, pts, rng=rng)
        assert np.abs(h.m - np.eye(3)).max() < 1e-9

    def test_pure_translation(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(50, 400, (60, 2))
        moved = pts + np.array([10.0, 0.0])
        h = estimate_rigid_update(pts, moved, rng=rng)
        proj = apply_homography_points(h, pts)
        assert np.abs(proj - moved).max() < 0.5

    def test_partial_loss_keeps_estimate(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(50, 400, (50, 2))
        moved = pts + np.array([4.0, -2.0])
        keep = rng.random(50) > 0.2  # caller drops lost points
        h = estimate_rigid_update(pts[keep], moved[keep], rng=rng)
        proj = apply_homography_points(h, pts)
        assert np.abs(proj - moved).max() < 1.0


class TestPoseCast:
    def test_forward_compose_oracle(self):
        # synthesize H = K [r1 r2 t] from a known pose, then invert the cast
        k = Intrinsics(500.0, 500.0, 320.0, 180.0)
        angle = 0.3
        axis = np.array([0.2, 0.9, 0.1])
        axis /= np.linalg.norm(axis)
        kx = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        r = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx
        t = np.array([0.1, -0.2, 3.0])
        h = Homography.normalized(k.matrix @ np.column_stack([r[:, 0], r[:, 1], t]))
        pose = homography_to_pose(h, k)
        assert np.abs(pose.rotation - r).max() < 1e-3
        assert np.abs(pose.translation - t).max() < 1e-3

    def test_fronto_parallel_translation(self):
        k = Intrinsics(500.0, 500.0, 320.0, 180.0)
        t = np.array([0.4, 0.1, 2.0])
        h = Homography.normalized(k.matrix @ np.column_stack([np.eye(3)[:, 0], np.eye(3)[:, 1], t]))
        pose = homography_to_pose(h, k)
        assert np.abs(pose.rotation - np.eye(3)).max() < 1e-6

    def test_degenerate_column_rejected(self):
        k = Intrinsics(500.0, 500.0, 320.0, 180.0)
        m = k.matrix @ np.column_stack([np.array([1e-9, 0, 0]), np.eye(3)[:, 1], [0, 0, 2.0]])
        with pytest.raises(DegenerateHomography):
            homography_to_pose(Homography.normalized(m), k)

    def test_invariants_under_noise(self):
        rng = np.random.default_rng(3)
        k = Intrinsics(500.0, 500.0, 320.0, 180.0)
        for _ in range(25):
            m = k.matrix @ np.column_stack(
                [
                    np.array([1.0, 0.0, 0.0]) + rng.normal(0, 0.2, 3),
                    np.array([0.0, 1.0, 0.0]) + rng.normal(0, 0.2, 3),
                    np.array([0.0, 0.0, 3.0]) + rng.normal(0, 0.2, 3),
                ]
            )
            try:
                pose = homography_to_pose(Homography.normalized(m), k)
            except DegenerateHomography:
                continue
            assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-6
            assert abs(np.linalg.det(pose.rotation) - 1.0) < 1e-6


class TestQuadHelpers:
    def test_center_of_square(self):
        q = quad_from_size(10, 10)
        assert quad_center(q) == pytest.approx((5.0, 5.0))

    def test_center_analytic_oracle(self):
        # unit square with one corner nudged: solve the diagonal intersection
        q = np.array([[0.0, 0.0], [1.4, 0.0], [1.0, 1.0], [0.0, 1.0]])
        # diag1: (0,0)+s*(1,1); diag2: (1.4,0)+u*(-1.4,1); equal -> s = 1.4/2.4
        s = 1.4 / 2.4
        assert quad_center(q) == pytest.approx((s, s))

    def test_degenerate_diagonals(self):
        q = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        with pytest.raises(DegenerateQuad):
            quad_center(q)

    def test_points_in_quad(self):
        quad = np.array([[2.0, 2.0], [8.0, 2.0], [8.0, 8.0], [2.0, 8.0]])
        pts = np.array([[5.0, 5.0], [1.0, 5.0], [9.0, 9.0], [2.5, 7.5]])
        assert points_in_quad(pts, quad).tolist() == [True, False, False, True]
