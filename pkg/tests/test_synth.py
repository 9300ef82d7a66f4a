"""Sequence generator tests: exact ground truth, script shapes, validity."""

import numpy as np
import pytest

from cloudtrack.errors import InvalidScript
from cloudtrack.geometry import Homography, apply_homography_points
from cloudtrack.synth import (
    MotionScript,
    default_scripts,
    fast_move_script,
    generate_sequence,
    make_poster,
    place_row,
    place_single,
    rotate_script,
    scale_script,
    static_script,
)


@pytest.fixture(scope="module")
def poster():
    return make_poster(55)


class TestScripts:
    def test_static_frames_identical(self, poster):
        seq = generate_sequence([place_single(1, poster)], static_script(5))
        for frame in seq.frames[1:]:
            assert np.array_equal(frame.pixels, seq.frames[0].pixels)
        for corners in seq.truth[1]:
            assert np.array_equal(corners, seq.truth[1][0])

    def test_scale_doubles_side_lengths(self, poster):
        duration = 21
        seq = generate_sequence(
            [place_single(1, poster)], scale_script(duration, max_scale=2.0)
        )
        mid = (duration - 1) // 2
        side0 = np.linalg.norm(seq.truth[1][0][1] - seq.truth[1][0][0])
        side_mid = np.linalg.norm(seq.truth[1][mid][1] - seq.truth[1][mid][0])
        assert side_mid == pytest.approx(2.0 * side0, abs=0.1)

    def test_rotation_matches_analytic_warp(self, poster):
        duration = 10
        seq = generate_sequence(
            [place_single(1, poster)], rotate_script(duration, max_angle_deg=45.0)
        )
        center = np.array([320.0, 180.0])
        for t in range(duration):
            theta = np.deg2rad(45.0) * t / (duration - 1)
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[c, -s], [s, c]])
            expected = (seq.truth[1][0] - center) @ rot.T + center
            assert np.abs(seq.truth[1][t] - expected).max() < 1e-9

    def test_truth_equals_homography_of_frame0(self, poster):
        script = default_scripts(12)["tilt"]
        seq = generate_sequence([place_single(1, poster)], script)
        for t, h in enumerate(script.homographies):
            expected = apply_homography_points(h, seq.truth[1][0])
            assert np.abs(seq.truth[1][t] - expected).max() < 1e-9

    def test_fast_move_speed(self):
        script = fast_move_script(20, speed_px=8.0, amplitude_px=64.0)
        offsets = [h.m[0, 2] for h in script.homographies]
        steps = np.abs(np.diff(offsets))
        assert np.all(steps <= 8.0 + 1e-9)
        assert steps.max() == pytest.approx(8.0)


class TestGenerateSequence:
    def test_out_of_view_placement_rejected(self, poster):
        from cloudtrack.synth import PlacedReference

        corners = np.array([[600.0, 300.0], [760.0, 300.0], [760.0, 460.0], [600.0, 460.0]])
        with pytest.raises(InvalidScript):
            generate_sequence([PlacedReference(1, poster, corners)], static_script(3))

    def test_out_of_view_entire_sequence_rejected(self, poster):
        # slides the poster out of view immediately and keeps it there
        gone = MotionScript(
            "gone", tuple(Homography.translation(5000.0, 0.0) for _ in range(4))
        )
        with pytest.raises(InvalidScript):
            generate_sequence([place_single(1, poster)], gone)

    def test_noise_deterministic_per_seed(self, poster):
        a = generate_sequence([place_single(1, poster)], static_script(3), noise_sigma=2.0, seed=5)
        b = generate_sequence([place_single(1, poster)], static_script(3), noise_sigma=2.0, seed=5)
        c = generate_sequence([place_single(1, poster)], static_script(3), noise_sigma=2.0, seed=6)
        assert np.array_equal(a.frames[1].pixels, b.frames[1].pixels)
        assert not np.array_equal(a.frames[1].pixels, c.frames[1].pixels)

    def test_row_placement_separation(self, poster):
        placements = place_row([(1, poster), (2, make_poster(56))], gap=110.0)
        seq = generate_sequence(placements, static_script(2))
        right_of_first = seq.truth[1][0][:, 0].max()
        left_of_second = seq.truth[2][0][:, 0].min()
        assert left_of_second - right_of_first == pytest.approx(110.0)
