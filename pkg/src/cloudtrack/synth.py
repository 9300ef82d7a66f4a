"""Synthetic reference posters, camera-motion scripts, and rendered sequences.

Every frame's ground truth is exact by construction: corner positions are the
script homography applied to the frame-0 placement, and the frame pixels are
the same homography applied to the composed frame-0 scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidScript
from .geometry import Homography, apply_homography_points, homography_from_quad, quad_from_size
from .image import ImageGray8

__all__ = [
    "make_poster",
    "PlacedReference",
    "MotionScript",
    "SyntheticSequence",
    "static_script",
    "fast_move_script",
    "rotate_script",
    "scale_script",
    "tilt_script",
    "composite_script",
    "default_scripts",
    "place_single",
    "place_row",
    "generate_sequence",
]

BACKGROUND = 128


def make_poster(seed: int, size: int = 400, shapes: int = 170) -> ImageGray8:
    """Flat-shaded polygon texture.

    Dense small polygons keep every local window textured (the segmenter
    needs variance everywhere) while staying highly compressible and full of
    corner features.
    """
    rng = np.random.default_rng(seed)
    img = np.full((size, size), int(rng.integers(60, 200)), np.uint8)
    for _ in range(shapes):
        n = int(rng.integers(3, 7))
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(size * 0.03, size * 0.11)
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
        pts = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], 1).astype(np.int32)
        cv2.fillPoly(img, [pts], int(rng.integers(0, 256)))
    return ImageGray8(img)


@dataclass(frozen=True)
class PlacedReference:
    """A reference poster pinned into the frame-0 scene."""

    ref_id: int
    image: ImageGray8
    corners: np.ndarray  # (4, 2) frame coordinates at frame 0, TL TR BR BL


@dataclass(frozen=True)
class MotionScript:
    """Per-frame camera homographies mapping frame-0 coords to frame-t coords."""

    kind: str
    homographies: tuple[Homography, ...]

    @property
    def duration(self) -> int:
        return len(self.homographies)


def _about_center(m: np.ndarray, center: tuple[float, float]) -> Homography:
    cx, cy = center
    t_in = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    t_out = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    return Homography.normalized(t_out @ m @ t_in)


def static_script(duration: int = 150) -> MotionScript:
    return MotionScript("static", tuple(Homography.identity() for _ in range(duration)))


def fast_move_script(
    duration: int = 150, speed_px: float = 8.0, amplitude_px: float = 64.0
) -> MotionScript:
    """Horizontal translation at ``speed_px`` per frame, bouncing at +/- amplitude."""
    hs = []
    offset = 0.0
    direction = 1.0
    for _ in range(duration):
        hs.append(Homography.translation(offset, 0.0))
        offset += direction * speed_px
        if offset > amplitude_px or offset < -amplitude_px:
            direction = -direction
            offset = float(np.clip(offset, -amplitude_px, amplitude_px))
    return MotionScript("fast_move", tuple(hs))


def rotate_script(
    duration: int = 150,
    max_angle_deg: float = 90.0,
    center: tuple[float, float] = (320.0, 180.0),
) -> MotionScript:
    hs = []
    for t in range(duration):
        theta = math.radians(max_angle_deg) * t / max(duration - 1, 1)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        hs.append(_about_center(rot, center))
    return MotionScript("rotate", tuple(hs))


def scale_script(
    duration: int = 150,
    max_scale: float = 2.0,
    center: tuple[float, float] = (320.0, 180.0),
) -> MotionScript:
    hs = []
    for t in range(duration):
        phase = 1.0 - abs(2.0 * t / max(duration - 1, 1) - 1.0)  # 0 -> 1 -> 0
        s = 1.0 + (max_scale - 1.0) * phase
        hs.append(_about_center(np.diag([s, s, 1.0]), center))
    return MotionScript("scale", tuple(hs))


def tilt_script(
    duration: int = 150,
    max_angle_deg: float = 40.0,
    center: tuple[float, float] = (320.0, 180.0),
    focal: float = 500.0,
) -> MotionScript:
    """Out-of-plane rotation about the vertical axis through the frame center."""
    cx, cy = center
    base = np.array([[cx - 1, cy - 1], [cx + 1, cy - 1], [cx + 1, cy + 1], [cx - 1, cy + 1]])
    # use a wide probe quad for a well-conditioned fit
    probe = np.array([[cx - 100, cy - 100], [cx + 100, cy - 100], [cx + 100, cy + 100], [cx - 100, cy + 100]])
    hs = []
    for t in range(duration):
        theta = math.radians(max_angle_deg) * t / max(duration - 1, 1)
        c, s = math.cos(theta), math.sin(theta)
        mapped = []
        for x, y in probe:
            px, py = x - cx, y - cy
            x3, z3 = px * c, px * s  # rotate about vertical axis
            w = focal + z3
            mapped.append([focal * x3 / w + cx, focal * py / w + cy])
        hs.append(homography_from_quad(probe, np.array(mapped)))
    return MotionScript("tilt", tuple(hs))


def composite_script(parts: list[MotionScript]) -> MotionScript:
    hs: list[Homography] = []
    for part in parts:
        hs.extend(part.homographies)
    return MotionScript("composite", tuple(hs))


def default_scripts(
    duration: int = 150, dims: tuple[int, int] = (640, 360)
) -> dict[str, MotionScript]:
    """The four standard camera scenarios plus a static control."""
    center = (dims[0] / 2.0, dims[1] / 2.0)
    return {
        "static": static_script(duration),
        "fast_move": fast_move_script(duration),
        "rotate": rotate_script(duration, center=center),
        "scale": scale_script(duration, center=center),
        "tilt": tilt_script(duration, center=center),
    }


def place_single(
    ref_id: int,
    image: ImageGray8,
    dims: tuple[int, int] = (640, 360),
    side: float = 160.0,
) -> PlacedReference:
    """Center one square poster of the given side length."""
    w, h = dims
    x0 = (w - side) / 2.0
    y0 = (h - side) / 2.0
    corners = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
    return PlacedReference(ref_id, image, corners)


def place_row(
    refs: list[tuple[int, ImageGray8]],
    dims: tuple[int, int] = (640, 360),
    side: float = 150.0,
    gap: float = 110.0,
) -> list[PlacedReference]:
    """Place posters in a horizontal row, separated by ``gap`` flat pixels."""
    w, h = dims
    n = len(refs)
    total = n * side + (n - 1) * gap
    x = (w - total) / 2.0
    y0 = (h - side) / 2.0
    out = []
    for ref_id, image in refs:
        corners = np.array([[x, y0], [x + side, y0], [x + side, y0 + side], [x, y0 + side]])
        out.append(PlacedReference(ref_id, image, corners))
        x += side + gap
    return out


@dataclass
class SyntheticSequence:
    """Rendered frames plus exact per-frame corner ground truth."""

    frames: list[ImageGray8]
    truth: dict[int, list[np.ndarray]]  # ref_id -> per-frame (4, 2) corners
    placements: list[PlacedReference]
    script: MotionScript
    dims: tuple[int, int]


def generate_sequence(
    placements: list[PlacedReference],
    script: MotionScript,
    dims: tuple[int, int] = (640, 360),
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> SyntheticSequence:
    """Render the script over a composed frame-0 scene."""
    w, h = dims
    scene = np.full((h, w), BACKGROUND, np.uint8)
    for placed in placements:
        c = placed.corners
        if c.min() < 0 or c[:, 0].max() > w - 1 or c[:, 1].max() > h - 1:
            raise InvalidScript(f"reference {placed.ref_id} does not fit in view at frame 0")
        src = quad_from_size(placed.image.width - 1, placed.image.height - 1)
        warp = homography_from_quad(src, c)
        patch = cv2.warpPerspective(placed.image.pixels, warp.m, (w, h), flags=cv2.INTER_LINEAR)
        mask = (
            cv2.warpPerspective(
                np.full(placed.image.shape, 255, np.uint8), warp.m, (w, h), flags=cv2.INTER_LINEAR
            )
            > 127
        )
        scene[mask] = patch[mask]

    rng = np.random.default_rng(seed)
    frames: list[ImageGray8] = []
    truth: dict[int, list[np.ndarray]] = {p.ref_id: [] for p in placements}
    any_in_view = {p.ref_id: False for p in placements}
    for h_t in script.homographies:
        px = cv2.warpPerspective(
            scene,
            h_t.m,
            (w, h),
            flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=BACKGROUND,
        )
        if noise_sigma > 0:
            noisy = px.astype(np.float64) + rng.normal(0.0, noise_sigma, px.shape)
            px = np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)
        frames.append(ImageGray8(px))
        for placed in placements:
            corners = apply_homography_points(h_t, placed.corners)
            truth[placed.ref_id].append(corners)
            inside = (
                (corners[:, 0] >= 0)
                & (corners[:, 0] <= w - 1)
                & (corners[:, 1] >= 0)
                & (corners[:, 1] <= h - 1)
            )
            if inside.all():
                any_in_view[placed.ref_id] = True
    for ref_id, seen in any_in_view.items():
        if not seen:
            raise InvalidScript(f"reference {ref_id} is out of view for the entire sequence")
    return SyntheticSequence(frames, truth, placements, script, dims)
