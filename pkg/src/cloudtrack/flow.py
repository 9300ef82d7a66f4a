"""Client-side feature detection and sparse optical flow.

Corners come from the Shi-Tomasi minimum-eigenvalue detector; frame-to-frame
motion from pyramidal Lucas-Kanade. Both are thin, contract-checked wrappers
over OpenCV so the per-frame budget stays well under the 30 FPS deadline.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import InvalidArgument
from .image import ImageGray8

__all__ = [
    "UNASSIGNED",
    "FeatureSet",
    "FlowResult",
    "FlowConfig",
    "detect_corners",
    "track_optical_flow",
]

# bitmap label for a live point whose object membership is not known yet;
# 0 is reserved for lost points and positive values for object ids
UNASSIGNED = -1


@dataclass
class FeatureSet:
    """One generation of tracked points with their group labels.

    ``bitmap[i]`` is 0 once point i is lost, UNASSIGNED while untagged, or
    the id of the object whose contour the point fell into.
    """

    generation: int
    points: np.ndarray  # (N, 2) float32
    bitmap: np.ndarray  # (N,) int32

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 2)
        self.bitmap = np.asarray(self.bitmap, dtype=np.int32).reshape(-1)
        if self.points.shape[0] != self.bitmap.shape[0]:
            raise InvalidArgument("bitmap length must equal point count")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def live_count(self) -> int:
        return int((self.bitmap != 0).sum())

    def group_indices(self, object_id: int) -> np.ndarray:
        return np.nonzero(self.bitmap == object_id)[0]

    def copy(self) -> "FeatureSet":
        return FeatureSet(self.generation, self.points.copy(), self.bitmap.copy())


@dataclass
class FlowResult:
    """Per-point flow output; status is False where tracking failed."""

    points: np.ndarray  # (N, 2) float32
    status: np.ndarray  # (N,) bool

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 2)
        self.status = np.asarray(self.status, dtype=bool).reshape(-1)
        if self.points.shape[0] != self.status.shape[0]:
            raise InvalidArgument("status length must equal point count")


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    window: int = 21
    max_iterations: int = 30
    epsilon: float = 0.01
    min_eig_threshold: float = 1e-4


def detect_corners(
    img: ImageGray8,
    max_count: int = 180,
    quality: float = 0.01,
    min_distance: float = 10.0,
) -> np.ndarray:
    """Shi-Tomasi corners as an (N, 2) float32 array, strongest first.

    Non-max suppressed, thresholded at quality * max response, greedily
    thinned to the pairwise min_distance, and capped at max_count.
    """
    if max_count < 1:
        raise InvalidArgument("max_count must be >= 1")
    if not (0.0 < quality <= 1.0):
        raise InvalidArgument("quality must be in (0, 1]")
    found = cv2.goodFeaturesToTrack(
        img.pixels,
        maxCorners=int(max_count),
        qualityLevel=float(quality),
        minDistance=float(min_distance),
        blockSize=3,
        useHarrisDetector=False,
    )
    if found is None:
        return np.empty((0, 2), dtype=np.float32)
    return found.reshape(-1, 2).astype(np.float32)


def track_optical_flow(
    prev: ImageGray8,
    next_: ImageGray8,
    pts: np.ndarray,
    cfg: FlowConfig | None = None,
) -> FlowResult:
    """Pyramidal Lucas-Kanade flow of ``pts`` from ``prev`` into ``next_``.

    A point is reported lost when it leaves the frame, the iteration fails
    to converge, or its local gradient matrix is near-singular.
    """
    cfg = cfg or FlowConfig()
    if prev.shape != next_.shape:
        raise InvalidArgument(f"frame dimensions differ: {prev.shape} vs {next_.shape}")
    pts = np.asarray(pts, dtype=np.float32).reshape(-1, 2)
    if pts.shape[0] == 0:
        return FlowResult(np.empty((0, 2), np.float32), np.empty((0,), bool))
    new_pts, status, _ = cv2.calcOpticalFlowPyrLK(
        prev.pixels,
        next_.pixels,
        pts.reshape(-1, 1, 2),
        None,
        winSize=(cfg.window, cfg.window),
        maxLevel=cfg.pyramid_levels - 1,
        criteria=(
            cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS,
            cfg.max_iterations,
            cfg.epsilon,
        ),
        minEigThreshold=cfg.min_eig_threshold,
    )
    new_pts = new_pts.reshape(-1, 2)
    ok = status.reshape(-1).astype(bool)
    h, w = next_.shape
    inside = (
        (new_pts[:, 0] >= 0.0)
        & (new_pts[:, 0] <= w - 1.0)
        & (new_pts[:, 1] >= 0.0)
        & (new_pts[:, 1] <= h - 1.0)
    )
    return FlowResult(new_pts, ok & inside)
