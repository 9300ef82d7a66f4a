"""Corner detection and pyramidal optical flow tests on synthetic frames."""

import numpy as np
import pytest

from cloudtrack.errors import InvalidArgument
from cloudtrack.flow import FeatureSet, detect_corners, track_optical_flow
from cloudtrack.image import ImageGray8, gaussian_blur


def _texture(w, h, seed=0, smooth=1.0):
    rng = np.random.default_rng(seed)
    img = ImageGray8(rng.integers(0, 256, (h, w)).astype(np.uint8))
    return gaussian_blur(img, smooth)


def _checkerboard(square=16, squares=8):
    grid = np.add.outer(np.arange(squares) % 2, np.arange(squares) % 2) % 2
    board = np.kron(grid, np.ones((square, square), dtype=np.uint8)) * np.uint8(255)
    return ImageGray8(board.astype(np.uint8))


class TestDetectCorners:
    def test_uniform_image_empty(self):
        img = ImageGray8.constant(64, 64, 128)
        assert detect_corners(img).shape == (0, 2)

    def test_checkerboard_crossings(self):
        board = _checkerboard(square=16, squares=8)
        corners = detect_corners(board, max_count=200, quality=0.01, min_distance=5)
        crossings = np.array(
            [[x * 16.0, y * 16.0] for x in range(1, 8) for y in range(1, 8)]
        )
        hit = 0
        for cx, cy in crossings:
            d = np.sqrt(((corners - [cx, cy]) ** 2).sum(axis=1)).min()
            hit += d <= 2.0
        assert hit >= 49

    def test_max_count_cap(self):
        img = _texture(320, 240, seed=5, smooth=0.8)
        corners = detect_corners(img, max_count=180, quality=0.01, min_distance=3)
        assert 0 < len(corners) <= 180

    def test_min_distance_respected(self):
        img = _texture(320, 240, seed=6)
        corners = detect_corners(img, max_count=150, quality=0.01, min_distance=10)
        diff = corners[:, None, :] - corners[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(dist, np.inf)
        assert dist.min() >= 10.0

    def test_bad_args(self):
        img = _texture(64, 64)
        with pytest.raises(InvalidArgument):
            detect_corners(img, max_count=0)
        with pytest.raises(InvalidArgument):
            detect_corners(img, quality=0.0)


class TestOpticalFlow:
    def test_identical_frames_zero_motion(self):
        img = _texture(200, 150, seed=1)
        pts = detect_corners(img, max_count=50, min_distance=8)
        res = track_optical_flow(img, img, pts)
        assert res.status.all()
        assert np.abs(res.points - pts).max() < 0.05

    def test_integer_shift_recovered(self):
        base = _texture(320, 240, seed=2)
        shifted = ImageGray8(np.roll(base.pixels, (3, 5), axis=(0, 1)).copy())
        pts = detect_corners(base, max_count=60, min_distance=10)
        interior = (
            (pts[:, 0] > 30) & (pts[:, 0] < 290 - 5) & (pts[:, 1] > 30) & (pts[:, 1] < 210 - 3)
        )
        pts = pts[interior]
        assert len(pts) >= 15
        res = track_optical_flow(base, shifted, pts)
        moved = res.points[res.status] - pts[res.status]
        assert res.status.mean() > 0.9
        assert np.abs(moved - [5.0, 3.0]).max() < 0.5

    def test_point_leaving_frame_lost(self):
        base = _texture(160, 120, seed=3)
        shifted = ImageGray8(np.roll(base.pixels, (0, -10), axis=(0, 1)).copy())
        pts = np.array([[2.0, 60.0]], dtype=np.float32)  # 2 px from left border, moving off
        res = track_optical_flow(base, shifted, pts)
        assert not res.status[0] or res.points[0, 0] < 0  # either flagged or clamped out

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            track_optical_flow(_texture(64, 64), _texture(65, 64), np.zeros((1, 2)))

    def test_forward_backward_consistency(self):
        base = _texture(320, 240, seed=4)
        shifted = ImageGray8(np.roll(base.pixels, (4, 6), axis=(0, 1)).copy())
        pts = detect_corners(base, max_count=40, min_distance=12)
        keep = (
            (pts[:, 0] > 30) & (pts[:, 0] < 280) & (pts[:, 1] > 30) & (pts[:, 1] < 200)
        )
        pts = pts[keep]
        fwd = track_optical_flow(base, shifted, pts)
        back = track_optical_flow(shifted, base, fwd.points[fwd.status])
        returned = back.points[back.status]
        start = pts[fwd.status][back.status]
        assert np.abs(returned - start).max() < 1.0

    def test_empty_points(self):
        img = _texture(64, 64)
        res = track_optical_flow(img, img, np.empty((0, 2)))
        assert len(res.points) == 0 and len(res.status) == 0


class TestFeatureSet:
    def test_bitmap_length_invariant(self):
        with pytest.raises(InvalidArgument):
            FeatureSet(0, np.zeros((3, 2)), np.zeros(2))

    def test_group_indices(self):
        fs = FeatureSet(1, np.zeros((4, 2)), np.array([0, 2, 2, -1]))
        assert fs.group_indices(2).tolist() == [1, 2]
        assert fs.live_count == 3
