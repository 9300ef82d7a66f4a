"""Client-side tracking state machine with latency hiding.

Frames advance a fixed logical cycle (30 frames by default). The first frame
of each cycle is a key frame: its image goes out as a recognition request and
the current feature points are snapshotted. Results come back several frames
later; the motion the tracker observed between the key frame and now is
re-applied to the result's corners, so the displayed pose matches the
current view no matter how long the answer took.

Per-point bookkeeping lives in the feature set's bitmap: 0 marks a lost
point (lost points never come back within a generation), UNASSIGNED marks a
live point with unknown membership, positive values are object ids.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientCorrespondences, PointAtInfinity, SessionError
from .flow import UNASSIGNED, FeatureSet, FlowConfig, detect_corners, track_optical_flow
from .geometry import (
    DegenerateHomography,
    DegenerateQuad,
    Homography,
    Intrinsics,
    Pose6DoF,
    RansacConfig,
    apply_homography_points,
    estimate_rigid_update,
    homography_from_quad,
    homography_to_pose,
    points_in_quad,
    quad_center,
)
from .image import ImageGray8
from .protocol import RecognitionRequest, ResultMessage

__all__ = [
    "TrackerConfig",
    "ObjectState",
    "TrackedObject",
    "TrackingUpdate",
    "ResultOutcome",
    "RegenerationTrigger",
    "ClientTracker",
    "pixel_error",
]


class ObjectState(enum.Enum):
    INITIALIZING = "initializing"
    TRACKING = "tracking"


class RegenerationTrigger(enum.Enum):
    NEW_OBJECTS = "new_objects"
    LOW_COUNT = "low_count"


@dataclass(frozen=True)
class TrackerConfig:
    cycle_length: int = 30
    max_points: int = 180
    quality: float = 0.01
    min_distance: float = 10.0
    flow: FlowConfig = field(default_factory=FlowConfig)
    ransac: RansacConfig = field(
        default_factory=lambda: RansacConfig(threshold_px=3.0, max_iterations=200, min_inliers=8)
    )
    min_group_size: int = 8
    low_count_fraction: float = 0.5
    stale_after: int = 30
    focal: float = 500.0
    seed: int = 0


@dataclass
class TrackedObject:
    """One recognized target and its current screen-space quad."""

    object_id: int
    ref_id: int
    corners: np.ndarray  # (4, 2) float64, current frame
    pose: Pose6DoF | None
    state: ObjectState
    frames_without_support: int = 0
    stale: bool = False

    def snapshot(self) -> "TrackedObject":
        return replace(self, corners=self.corners.copy())


@dataclass
class TrackingUpdate:
    """Per-frame output: object snapshots and, on key frames, the request."""

    frame_index: int
    objects: list[TrackedObject]
    request_to_send: RecognitionRequest | None
    timings: dict[str, float]  # ms: flow, estimate, detect, total


@dataclass
class ResultOutcome:
    applied: bool
    reason: str  # "applied" | "stale_cycle" | "no_snapshot"
    new_object_ids: list[int] = field(default_factory=list)


@dataclass
class _KeySnapshot:
    cycle_id: int
    generation: int
    points: np.ndarray
    bitmap: np.ndarray


def pixel_error(tracked_corners: np.ndarray, truth_corners: np.ndarray) -> float:
    """Screen distance between the diagonal-intersection centers of two quads."""
    c1 = quad_center(tracked_corners)
    c2 = quad_center(truth_corners)
    return math.hypot(c1.x - c2.x, c1.y - c2.y)


class ClientTracker:
    """Single-threaded tracker; results from the network are applied between
    frames by calling :meth:`on_result`."""

    def __init__(self, cfg: TrackerConfig | None = None, nonce: int = 0):
        self.cfg = cfg or TrackerConfig()
        self.nonce = nonce
        self.frame_index = 0
        self.cycle_phase = 0
        self.cycle_counter = 0
        self.features: FeatureSet | None = None
        self.prev_frame: ImageGray8 | None = None
        self.key_snapshot: _KeySnapshot | None = None
        self.pending_request: int | None = None
        self.motion_since_key: Homography = Homography.identity()
        self.objects: dict[int, TrackedObject] = {}
        self.initial_count = 0
        self.session_dims: tuple[int, int] | None = None
        self.counters = {
            "frames": 0,
            "requests_sent": 0,
            "results_applied": 0,
            "results_discarded": 0,
            "regenerations": 0,
        }
        self._rng = np.random.default_rng(self.cfg.seed)

    # --- per-frame processing ------------------------------------------

    def process_frame(self, frame: ImageGray8) -> TrackingUpdate:
        t_start = time.perf_counter()
        if self.session_dims is None:
            self.session_dims = (frame.width, frame.height)
        elif self.session_dims != (frame.width, frame.height):
            raise SessionError(
                f"frame dimensions changed mid-session: {self.session_dims} -> "
                f"{(frame.width, frame.height)}"
            )
        timings = {"flow": 0.0, "estimate": 0.0, "detect": 0.0}

        if self.features is None:
            t0 = time.perf_counter()
            self._regenerate(frame, RegenerationTrigger.LOW_COUNT, initial=True)
            timings["detect"] = (time.perf_counter() - t0) * 1000.0
        else:
            t0 = time.perf_counter()
            prev_points = self.features.points.copy()
            self._advance_flow(frame)
            timings["flow"] = (time.perf_counter() - t0) * 1000.0

            t0 = time.perf_counter()
            self._compose_global_motion(prev_points)
            self._update_objects(prev_points)
            timings["estimate"] = (time.perf_counter() - t0) * 1000.0

            if self.features.live_count < math.floor(
                self.cfg.low_count_fraction * self.initial_count
            ):
                t0 = time.perf_counter()
                self._regenerate(frame, RegenerationTrigger.LOW_COUNT)
                timings["detect"] += (time.perf_counter() - t0) * 1000.0

        request = None
        if self.cycle_phase == 0:
            cycle_id = self.cycle_counter
            self.cycle_counter += 1
            self.key_snapshot = _KeySnapshot(
                cycle_id=cycle_id,
                generation=self.features.generation,
                points=self.features.points.copy(),
                bitmap=self.features.bitmap.copy(),
            )
            self.motion_since_key = Homography.identity()
            self.pending_request = cycle_id
            request = RecognitionRequest(nonce=self.nonce, cycle_id=cycle_id, frame=frame.copy())
            self.counters["requests_sent"] += 1

        self.prev_frame = frame
        self.frame_index += 1
        self.cycle_phase = (self.cycle_phase + 1) % self.cfg.cycle_length
        self.counters["frames"] += 1
        timings["total"] = (time.perf_counter() - t_start) * 1000.0
        return TrackingUpdate(
            frame_index=self.frame_index - 1,
            objects=[obj.snapshot() for obj in self.objects.values()],
            request_to_send=request,
            timings=timings,
        )

    def _advance_flow(self, frame: ImageGray8) -> None:
        feats = self.features
        live = np.nonzero(feats.bitmap != 0)[0]
        if live.size == 0:
            return
        result = track_optical_flow(self.prev_frame, frame, feats.points[live], self.cfg.flow)
        feats.points[live] = result.points
        lost = live[~result.status]
        feats.bitmap[lost] = 0  # lost points never resurrect within a generation

    def _compose_global_motion(self, prev_points: np.ndarray) -> None:
        feats = self.features
        live = np.nonzero(feats.bitmap != 0)[0]
        if live.size < max(4, self.cfg.min_group_size):
            return
        try:
            step = estimate_rigid_update(
                prev_points[live], feats.points[live], self.cfg.ransac, self._rng
            )
        except InsufficientCorrespondences:
            return
        self.motion_since_key = step.compose(self.motion_since_key)

    def _update_objects(self, prev_points: np.ndarray) -> None:
        feats = self.features
        for obj in self.objects.values():
            group = feats.group_indices(obj.object_id)
            moved = False
            if obj.state is ObjectState.TRACKING and group.size >= max(4, self.cfg.min_group_size):
                try:
                    step = estimate_rigid_update(
                        prev_points[group], feats.points[group], self.cfg.ransac, self._rng
                    )
                    corners = apply_homography_points(step, obj.corners)
                    quad_center(corners)  # raises if the quad degenerated
                    obj.corners = corners
                    obj.pose = self._pose_from_corners(corners)
                    moved = True
                except (InsufficientCorrespondences, DegenerateQuad, DegenerateHomography, PointAtInfinity):
                    moved = False
            if moved:
                obj.frames_without_support = 0
                obj.stale = False
            else:
                obj.frames_without_support += 1
                if obj.frames_without_support >= self.cfg.stale_after:
                    obj.stale = True

    def _pose_from_corners(self, corners: np.ndarray) -> Pose6DoF | None:
        if self.session_dims is None:
            return None
        w, h = self.session_dims
        k = Intrinsics.default_for(w, h, self.cfg.focal)
        unit = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        try:
            return homography_to_pose(homography_from_quad(unit, corners), k)
        except (DegenerateHomography, InsufficientCorrespondences):
            return None

    # --- recognition results -------------------------------------------

    def on_result(self, result: ResultMessage) -> ResultOutcome:
        if self.key_snapshot is None:
            self.counters["results_discarded"] += 1
            return ResultOutcome(False, "no_snapshot")
        if result.cycle_id != self.key_snapshot.cycle_id:
            self.counters["results_discarded"] += 1
            return ResultOutcome(False, "stale_cycle")
        if self.pending_request == result.cycle_id:
            self.pending_request = None

        new_ids: list[int] = []
        for rec in result.objects:
            corners_key = rec.corners.astype(np.float64)
            correction = self._key_to_now(rec.object_id, corners_key)
            try:
                corners_now = apply_homography_points(correction, corners_key)
                quad_center(corners_now)
            except (DegenerateQuad, PointAtInfinity):
                continue
            obj = self.objects.get(rec.object_id)
            if obj is None:
                new_ids.append(rec.object_id)
                obj = TrackedObject(
                    object_id=rec.object_id,
                    ref_id=rec.ref_id,
                    corners=corners_now,
                    pose=self._pose_from_corners(corners_now),
                    state=ObjectState.TRACKING,
                )
                self.objects[rec.object_id] = obj
            else:
                obj.corners = corners_now
                obj.pose = self._pose_from_corners(corners_now)
                obj.state = ObjectState.TRACKING
                obj.ref_id = rec.ref_id
            obj.frames_without_support = 0
            obj.stale = False
            self._label_group(rec.object_id, corners_key)
        self.counters["results_applied"] += 1

        if new_ids and self.prev_frame is not None:
            self._regenerate(self.prev_frame, RegenerationTrigger.NEW_OBJECTS)
        return ResultOutcome(True, "applied", new_ids)

    def _key_to_now(self, object_id: int, corners_key: np.ndarray) -> Homography:
        """Motion from the key frame to the present for one object group."""
        snap = self.key_snapshot
        feats = self.features
        if snap is not None and feats is not None and snap.generation == feats.generation:
            inside = points_in_quad(snap.points, corners_key)
            usable = (
                inside
                & (feats.bitmap != 0)
                & (snap.bitmap != 0)
                & ((feats.bitmap == UNASSIGNED) | (feats.bitmap == object_id))
            )
            idx = np.nonzero(usable)[0]
            if idx.size >= max(4, self.cfg.min_group_size):
                try:
                    return estimate_rigid_update(
                        snap.points[idx], feats.points[idx], self.cfg.ransac, self._rng
                    )
                except InsufficientCorrespondences:
                    pass
        return self.motion_since_key

    def _label_group(self, object_id: int, corners_key: np.ndarray) -> None:
        snap = self.key_snapshot
        feats = self.features
        if snap is None or feats is None or snap.generation != feats.generation:
            return
        inside = points_in_quad(snap.points, corners_key)
        assignable = (
            inside
            & (feats.bitmap != 0)
            & ((feats.bitmap == UNASSIGNED) | (feats.bitmap == object_id))
        )
        feats.bitmap[assignable] = object_id

    # --- feature regeneration -------------------------------------------

    def _regenerate(
        self, frame: ImageGray8, trigger: RegenerationTrigger, initial: bool = False
    ) -> FeatureSet:
        points = detect_corners(frame, self.cfg.max_points, self.cfg.quality, self.cfg.min_distance)
        bitmap = np.full(points.shape[0], UNASSIGNED, dtype=np.int32)
        for object_id, obj in self.objects.items():
            if points.shape[0] == 0:
                break
            inside = points_in_quad(points, obj.corners)
            bitmap[inside & (bitmap == UNASSIGNED)] = object_id
        generation = 0 if self.features is None else self.features.generation + 1
        self.features = FeatureSet(generation, points, bitmap)
        self.initial_count = points.shape[0]
        if not initial:
            self.counters["regenerations"] += 1
        return self.features

    def regenerate(self, frame: ImageGray8, trigger: RegenerationTrigger) -> FeatureSet:
        """Force a feature regeneration (normally triggered internally)."""
        return self._regenerate(frame, trigger)
