"""Projective geometry: homographies, robust estimation, planar pose recovery.

A homography here is always a 3x3 real matrix acting on homogeneous image
coordinates, normalized so m[2][2] == 1 whenever it comes out of an
estimator. Robust fitting is RANSAC over a normalized (Hartley) DLT, with
the random generator supplied by the caller so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateHomography,
    DegenerateQuad,
    InsufficientCorrespondences,
    InvalidArgument,
    PointAtInfinity,
)
from .image import Point2

__all__ = [
    "Homography",
    "Pose6DoF",
    "Intrinsics",
    "RansacConfig",
    "apply_homography",
    "apply_homography_points",
    "fit_homography_dlt",
    "homography_from_quad",
    "estimate_homography_ransac",
    "estimate_rigid_update",
    "homography_to_pose",
    "quad_from_size",
    "quad_center",
    "points_in_quad",
]


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform; m[2][2] is kept at 1 by the constructors."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidArgument("homography matrix must be 3x3")
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    @staticmethod
    def translation(tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return Homography(m)

    @staticmethod
    def scale(sx: float, sy: float | None = None) -> "Homography":
        sy = sx if sy is None else sy
        return Homography(np.diag([sx, sy, 1.0]))

    @staticmethod
    def normalized(m: np.ndarray) -> "Homography":
        m = np.asarray(m, dtype=np.float64)
        if abs(m[2, 2]) < 1e-15:
            raise DegenerateHomography("cannot normalize: m[2][2] is zero")
        return Homography(m / m[2, 2])

    def compose(self, other: "Homography") -> "Homography":
        """self after other: (self @ other) applied to a point."""
        return Homography.normalized(self.m @ other.m)

    def inverse(self) -> "Homography":
        det = np.linalg.det(self.m)
        if abs(det) < 1e-12:
            raise DegenerateHomography(f"singular homography (det={det:g})")
        return Homography.normalized(np.linalg.inv(self.m))


@dataclass(frozen=True)
class Pose6DoF:
    """Planar target pose: orthonormal rotation plus translation.

    Translation is expressed in units of the reference plane's width (the
    plane coordinate system handed to :func:`homography_to_pose`).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise InvalidArgument("rotation must be 3x3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise InvalidArgument("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidArgument("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgument("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @staticmethod
    def default_for(width: int, height: int, focal: float = 500.0) -> "Intrinsics":
        return Intrinsics(focal, focal, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 3.0
    max_iterations: int = 500
    confidence: float = 0.995
    min_inliers: int = 8


def apply_homography(h: Homography, p: Point2 | tuple[float, float]) -> Point2:
    """Map a single point; raises PointAtInfinity when w vanishes."""
    x, y = float(p[0]), float(p[1])
    v = h.m @ np.array([x, y, 1.0])
    if abs(v[2]) < 1e-12:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity")
    return Point2(v[0] / v[2], v[1] / v[2])


def apply_homography_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Map an (N, 2) array of points. Rows with vanishing w raise."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    ones = np.ones((pts.shape[0], 1))
    v = np.hstack([pts, ones]) @ h.m.T
    w = v[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinity("some points map to infinity")
    return v[:, :2] / w[:, None]


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    shifted = pts - centroid
    mean_dist = np.sqrt((shifted**2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 1e-12 else 1.0
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return shifted * scale, t


def fit_homography_dlt(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Normalized direct linear transform over >= 4 correspondences."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < 4 or dst.shape[0] != n:
        raise InsufficientCorrespondences(f"need >= 4 matched points, got {n} / {dst.shape[0]}")
    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)
    a = np.zeros((2 * n, 9))
    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-12:
        raise DegenerateHomography("correspondences are degenerate (rank-deficient DLT)")
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    return Homography.normalized(h)


def homography_from_quad(src_quad: np.ndarray, dst_quad: np.ndarray) -> Homography:
    """Exact homography between two 4-point quads (TL, TR, BR, BL order)."""
    return fit_homography_dlt(np.asarray(src_quad), np.asarray(dst_quad))


def _sample_is_degenerate(pts: np.ndarray) -> bool:
    # any 3 of the 4 sample points collinear makes the DLT unstable
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        area = abs(
            (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
        )
        if area < 1e-9:
            return True
    return False


def _reprojection_errors(h: Homography, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    v = np.hstack([src, np.ones((src.shape[0], 1))]) @ h.m.T
    w = v[:, 2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    proj = v[:, :2] / w[:, None]
    err = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    err[bad] = np.inf
    return err


def estimate_homography_ransac(
    src: np.ndarray,
    dst: np.ndarray,
    cfg: RansacConfig | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Homography, np.ndarray]:
    """RANSAC homography fit; returns (H, boolean inlier mask).

    The winning consensus set is refit with the normalized DLT and the mask
    recomputed against the refit model.
    """
    cfg = cfg or RansacConfig()
    rng = rng or np.random.default_rng(0)
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = src.shape[0]
    if n < 4 or dst.shape[0] != n:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n} / {dst.shape[0]}")

    best_mask: np.ndarray | None = None
    best_count = 0
    max_iters = cfg.max_iterations
    it = 0
    while it < max_iters:
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        sample_src = src[idx]
        sample_dst = dst[idx]
        if _sample_is_degenerate(sample_src) or _sample_is_degenerate(sample_dst):
            continue
        try:
            h = fit_homography_dlt(sample_src, sample_dst)
        except DegenerateHomography:
            continue
        mask = _reprojection_errors(h, src, dst) <= cfg.threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            # standard adaptive stop: enough iterations to hit a clean sample
            ratio = count / n
            if ratio >= 1.0 - 1e-12:
                break
            denom = math.log(max(1.0 - ratio**4, 1e-12))
            needed = math.ceil(math.log(max(1.0 - cfg.confidence, 1e-12)) / denom)
            max_iters = min(cfg.max_iterations, max(needed, 1))

    if best_mask is None or best_count < max(4, cfg.min_inliers):
        raise InsufficientCorrespondences(
            f"consensus of {best_count} below minimum {cfg.min_inliers}"
        )
    refit = fit_homography_dlt(src[best_mask], dst[best_mask])
    final_mask = _reprojection_errors(refit, src, dst) <= cfg.threshold_px
    if int(final_mask.sum()) < max(4, cfg.min_inliers):
        final_mask = best_mask
        refit = fit_homography_dlt(src[best_mask], dst[best_mask])
    return refit, final_mask


def estimate_rigid_update(
    old_pts: np.ndarray,
    new_pts: np.ndarray,
    cfg: RansacConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Homography:
    """Robust frame-to-frame transform of one tracked point group."""
    h, _ = estimate_homography_ransac(old_pts, new_pts, cfg=cfg, rng=rng)
    return h


def homography_to_pose(h: Homography, k: Intrinsics, ref_width: float = 1.0) -> Pose6DoF:
    """Decompose a plane-to-image homography into rotation and translation.

    ``h`` maps reference-plane coordinates to pixels. ``ref_width`` is the
    width of the reference in those plane units; the translation comes back
    scaled so the plane has unit width. The rotation is the nearest
    orthonormal matrix (SVD projection), so the Pose6DoF invariants hold for
    any non-degenerate input.
    """
    m = h.m @ np.diag([ref_width, ref_width, 1.0]) if ref_width != 1.0 else h.m
    m = np.linalg.inv(k.matrix) @ m
    n1 = np.linalg.norm(m[:, 0])
    n2 = np.linalg.norm(m[:, 1])
    if n1 < 1e-12 or n2 < 1e-12:
        raise DegenerateHomography("homography column collapsed to zero")
    if abs(n1 / n2 - 1.0) > 0.5:
        raise DegenerateHomography(f"column norm ratio {n1 / n2:.3f} too far from 1")
    lam = 2.0 / (n1 + n2)
    if lam * m[2, 2] < 0:  # keep the plane in front of the camera
        lam = -lam
    r1 = lam * m[:, 0]
    r2 = lam * m[:, 1]
    r3 = np.cross(r1, r2)
    rot = np.column_stack([r1, r2, r3])
    u, _, vt = np.linalg.svd(rot)
    rot = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    t = lam * m[:, 2]
    return Pose6DoF(rot, t)


def quad_from_size(width: float, height: float) -> np.ndarray:
    """Corners of an axis-aligned rectangle, TL, TR, BR, BL."""
    return np.array(
        [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]], dtype=np.float64
    )


def quad_center(quad: np.ndarray) -> Point2:
    """Intersection of the two diagonals of a simple quadrilateral."""
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    d1 = q[2] - q[0]  # TL -> BR
    d2 = q[3] - q[1]  # TR -> BL
    det = d1[0] * (-d2[1]) - (-d2[0]) * d1[1]
    scale = max(np.abs(d1).max(), np.abs(d2).max(), 1.0)
    if abs(det) < 1e-9 * scale * scale:
        raise DegenerateQuad("diagonals are (near-)parallel")
    rhs = q[1] - q[0]
    s = (rhs[0] * (-d2[1]) - (-d2[0]) * rhs[1]) / det
    return Point2(q[0, 0] + s * d1[0], q[0, 1] + s * d1[1])


def points_in_quad(pts: np.ndarray, quad: np.ndarray) -> np.ndarray:
    """Winding-number containment test of points against a quadrilateral."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    winding = np.zeros(pts.shape[0], dtype=np.int32)
    for i in range(4):
        a = q[i]
        b = q[(i + 1) % 4]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (pts[:, 0] - a[0]) * (b[1] - a[1])
        upward = (a[1] <= pts[:, 1]) & (b[1] > pts[:, 1]) & (cross > 0)
        downward = (a[1] > pts[:, 1]) & (b[1] <= pts[:, 1]) & (cross < 0)
        winding += upward.astype(np.int32) - downward.astype(np.int32)
    return winding != 0
