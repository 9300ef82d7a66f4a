"""Per-request recognition: segment, encode, shortlist, verify, locate.

Each patch is encoded into a Fisher vector, its five nearest references are
shortlisted, and neighbors are checked in rank order by descriptor matching
plus a robust homography fit. The first neighbor with enough geometric
support wins; a patch that satisfies none of its neighbors is dropped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .binary_features import AgastConfig, MatchConfig, detect_agast, extract_freak, match_descriptors
from .errors import InsufficientCorrespondences
from .geometry import (
    DegenerateQuad,
    RansacConfig,
    apply_homography_points,
    estimate_homography_ransac,
    quad_center,
)
from .image import ImageGray8
from .lsh import query_knn
from .protocol import MAX_RESULT_OBJECTS, RecognizedObject
from .refindex import ReferenceIndex
from .segmentation import SegConfig, segment

__all__ = ["RecognizerConfig", "RecognitionOutcome", "ObjectIdAssigner", "recognize_frame"]


@dataclass(frozen=True)
class RecognizerConfig:
    seg: SegConfig = field(default_factory=SegConfig)
    agast: AgastConfig = field(default_factory=AgastConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    ransac: RansacConfig = field(default_factory=lambda: RansacConfig(threshold_px=5.0))
    neighbors: int = 5
    min_matches: int = 15
    min_patch_descriptors: int = 15
    seed: int = 0


@dataclass
class RecognitionOutcome:
    """Recognitions for one request frame plus per-stage timings (ms)."""

    cycle_id: int
    recognized: list[RecognizedObject]
    timings: dict[str, float]


class ObjectIdAssigner:
    """Stable object ids per reference, consistent across cycles."""

    def __init__(self) -> None:
        self._by_ref: dict[int, int] = {}
        self._next = 1

    def object_id(self, ref_id: int) -> int:
        if ref_id not in self._by_ref:
            self._by_ref[ref_id] = self._next
            self._next += 1
        return self._by_ref[ref_id]


def _corners_plausible(corners: np.ndarray, dims: tuple[int, int]) -> bool:
    w, h = dims
    margin_x, margin_y = 0.1 * w, 0.1 * h
    if corners[:, 0].min() < -margin_x or corners[:, 0].max() > w + margin_x:
        return False
    if corners[:, 1].min() < -margin_y or corners[:, 1].max() > h + margin_y:
        return False
    try:
        quad_center(corners)
    except DegenerateQuad:
        return False
    return True


def recognize_frame(
    index: ReferenceIndex,
    frame: ImageGray8,
    cfg: RecognizerConfig | None = None,
    ids: ObjectIdAssigner | None = None,
    cycle_id: int = 0,
) -> RecognitionOutcome:
    """Run the full pipeline on one frame; empty outcome is a valid answer."""
    cfg = cfg or RecognizerConfig()
    ids = ids or ObjectIdAssigner()
    rng = np.random.default_rng(cfg.seed)
    timings = {"segment": 0.0, "encode": 0.0, "knn": 0.0, "verify": 0.0}

    t0 = time.perf_counter()
    patches = segment(frame, cfg.seg)
    timings["segment"] = (time.perf_counter() - t0) * 1000.0

    recognized: list[RecognizedObject] = []
    seen_refs: set[int] = set()
    for patch in patches:
        t1 = time.perf_counter()
        kps = detect_agast(patch.image, cfg.agast)
        descs, _ = extract_freak(patch.image, kps, octaves=cfg.agast.octaves)
        if len(descs) < cfg.min_patch_descriptors:
            timings["encode"] += (time.perf_counter() - t1) * 1000.0
            continue
        fv = index.encode(descs)
        timings["encode"] += (time.perf_counter() - t1) * 1000.0

        t2 = time.perf_counter()
        neighbors = query_knn(index.lsh, fv, k=cfg.neighbors)
        timings["knn"] += (time.perf_counter() - t2) * 1000.0

        t3 = time.perf_counter()
        for ref_id, _dist in neighbors:
            if ref_id in seen_refs:
                continue
            entry = index.entries[ref_id]
            pairs = match_descriptors(descs, entry.descriptors, cfg.match)
            if len(pairs) < cfg.min_matches:
                continue
            src = entry.descriptors.xy[[p.reference_idx for p in pairs]]
            dst = descs.xy[[p.query_idx for p in pairs]]
            try:
                h_ref_to_patch, _ = estimate_homography_ransac(src, dst, cfg.ransac, rng)
            except InsufficientCorrespondences:
                continue
            h_ref_to_frame = patch.to_frame.compose(h_ref_to_patch)
            corners = apply_homography_points(h_ref_to_frame, entry.corners)
            if not _corners_plausible(corners, (frame.width, frame.height)):
                continue
            recognized.append(
                RecognizedObject(
                    object_id=ids.object_id(ref_id),
                    ref_id=ref_id,
                    corners=corners.astype(np.float32),
                )
            )
            seen_refs.add(ref_id)
            break  # first verified neighbor wins; otherwise patch is discarded
        timings["verify"] += (time.perf_counter() - t3) * 1000.0
        if len(recognized) >= MAX_RESULT_OBJECTS:
            break
    return RecognitionOutcome(cycle_id=cycle_id, recognized=recognized, timings=timings)
