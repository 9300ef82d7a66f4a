"""Server-side candidate extraction: find textured regions in a frame.

The pipeline follows blur -> sliding-window variance -> threshold ->
erosion/dilation -> connected components -> per-component quadrilateral,
then perspective-crops every surviving region to a fixed-size square patch
so each patch lands at the same scale as the reference images and contains
at most one of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .errors import DegenerateHomography, InvalidArgument
from .geometry import Homography, homography_from_quad
from .image import ImageGray8, gaussian_blur

__all__ = ["SegConfig", "SegmentPatch", "variance_map", "segment", "order_quad"]


@dataclass(frozen=True)
class SegConfig:
    """Knobs for the variance segmenter; defaults suit poster-on-wall scenes.

    ``morph_radius`` and ``close_radius`` are measured in variance-grid cells
    (one cell per window stride), not in frame pixels. Closing after the
    open step bridges low-variance gaps inside one object without moving
    region boundaries, so flat patches inside a poster do not split it.
    """

    sigma: float = 1.5
    window: int = 16
    stride: int = 8
    var_threshold: float = 100.0
    morph_radius: int = 2
    close_radius: int = 3
    min_area_px: float = 2500.0
    merge_iou: float = 0.3
    patch_size: int = 400


@dataclass
class SegmentPatch:
    """One candidate region, rectified to patch_size x patch_size."""

    image: ImageGray8
    polygon: np.ndarray  # (N, 2) convex outline, frame coordinates
    bbox_corners: np.ndarray  # (4, 2) min-area quad, TL TR BR BL
    source_frame_dims: tuple[int, int]  # (width, height)
    to_frame: Homography  # patch pixel coords -> frame pixel coords


def variance_map(img: ImageGray8, window: int, stride: int) -> np.ndarray:
    """Population variance of every window position, on a stride grid.

    Output dims are floor((dim - window) / stride) + 1 per axis.
    """
    h, w = img.shape
    if window < 1 or window > min(h, w):
        raise InvalidArgument(f"window {window} does not fit a {w}x{h} image")
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    px = img.pixels.astype(np.float64)
    s1 = np.zeros((h + 1, w + 1))
    s2 = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(px, axis=0), axis=1, out=s1[1:, 1:])
    np.cumsum(np.cumsum(px * px, axis=0), axis=1, out=s2[1:, 1:])
    ys = np.arange(0, h - window + 1, stride)
    xs = np.arange(0, w - window + 1, stride)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")

    def rect_sum(s: np.ndarray) -> np.ndarray:
        return (
            s[yy + window, xx + window]
            - s[yy, xx + window]
            - s[yy + window, xx]
            + s[yy, xx]
        )

    n = float(window * window)
    mean = rect_sum(s1) / n
    return np.maximum(rect_sum(s2) / n - mean * mean, 0.0)


def order_quad(quad: np.ndarray) -> np.ndarray:
    """Reorder 4 corner points into TL, TR, BR, BL.

    Points are sorted by angle around the centroid (clockwise on screen),
    then the cycle is rotated to start nearest the top-left. Unlike min-sum /
    min-diff corner picking this never selects one point twice, so rotated
    quads stay simple.
    """
    q = np.asarray(quad, dtype=np.float64).reshape(4, 2)
    center = q.mean(axis=0)
    angles = np.arctan2(q[:, 1] - center[1], q[:, 0] - center[0])
    ordered = q[np.argsort(angles)]
    start = int(np.argmin(ordered.sum(axis=1) + 1e-9 * ordered[:, 0]))
    return np.roll(ordered, -start, axis=0)


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def _quad_iou(a: np.ndarray, b: np.ndarray) -> float:
    area_a = cv2.contourArea(a.astype(np.float32))
    area_b = cv2.contourArea(b.astype(np.float32))
    if area_a <= 0 or area_b <= 0:
        return 0.0
    inter, _ = cv2.intersectConvexConvex(a.astype(np.float32), b.astype(np.float32))
    union = area_a + area_b - inter
    return float(inter / union) if union > 0 else 0.0


def segment(frame: ImageGray8, cfg: SegConfig | None = None) -> list[SegmentPatch]:
    """Extract candidate object patches from a frame (possibly none)."""
    cfg = cfg or SegConfig()
    if frame.width < 64 or frame.height < 64:
        raise InvalidArgument("frame must be at least 64x64")
    blurred = gaussian_blur(frame, cfg.sigma)
    vmap = variance_map(blurred, cfg.window, cfg.stride)
    mask = vmap > cfg.var_threshold
    if cfg.morph_radius > 0:
        structure = _disk(cfg.morph_radius)
        mask = ndimage.binary_erosion(mask, structure=structure)
        mask = ndimage.binary_dilation(mask, structure=structure)
    if cfg.close_radius > 0:
        closing = _disk(cfg.close_radius)
        r = cfg.close_radius
        padded = np.pad(mask, r, mode="constant")  # keep border cells closable
        padded = ndimage.binary_erosion(
            ndimage.binary_dilation(padded, structure=closing), structure=closing
        )
        mask = ndimage.binary_fill_holes(padded[r:-r, r:-r])
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))

    # per component: stride-sized cells around each flagged window's center;
    # full window footprints overshoot the texture edge by up to a window,
    # which pollutes the rectified patch with background
    half = cfg.window / 2.0 - cfg.stride / 2.0
    groups: list[np.ndarray] = []
    for comp in range(1, count + 1):
        cy, cx = np.nonzero(labels == comp)
        x0 = cx.astype(np.float64) * cfg.stride + half
        y0 = cy.astype(np.float64) * cfg.stride + half
        x1 = x0 + cfg.stride
        y1 = y0 + cfg.stride
        pts = np.concatenate(
            [
                np.stack([x0, y0], axis=1),
                np.stack([x1, y0], axis=1),
                np.stack([x1, y1], axis=1),
                np.stack([x0, y1], axis=1),
            ]
        )
        groups.append(pts)

    # merge overlapping quads so one poster cannot yield two patches
    merged = True
    while merged and len(groups) > 1:
        merged = False
        quads = [order_quad(cv2.boxPoints(cv2.minAreaRect(g.astype(np.float32)))) for g in groups]
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if _quad_iou(quads[i], quads[j]) > cfg.merge_iou:
                    groups[i] = np.concatenate([groups[i], groups[j]])
                    del groups[j]
                    merged = True
                    break
            if merged:
                break

    patch_quad = np.array(
        [
            [0.0, 0.0],
            [cfg.patch_size - 1.0, 0.0],
            [cfg.patch_size - 1.0, cfg.patch_size - 1.0],
            [0.0, cfg.patch_size - 1.0],
        ],
        dtype=np.float64,
    )
    patches: list[SegmentPatch] = []
    for pts in groups:
        hull = cv2.convexHull(pts.astype(np.float32)).reshape(-1, 2)
        if cv2.contourArea(hull) < cfg.min_area_px:
            continue
        quad = order_quad(cv2.boxPoints(cv2.minAreaRect(hull)))
        try:
            warp = homography_from_quad(quad, patch_quad)
            warp.inverse()
        except DegenerateHomography:
            continue  # sliver component; nothing recognizable in it
        patch_px = cv2.warpPerspective(
            frame.pixels,
            warp.m,
            (cfg.patch_size, cfg.patch_size),
            flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_REPLICATE,
        )
        patches.append(
            SegmentPatch(
                image=ImageGray8(patch_px),
                polygon=hull.astype(np.float64),
                bbox_corners=quad,
                source_frame_dims=(frame.width, frame.height),
                to_frame=warp.inverse(),
            )
        )
    patches.sort(key=lambda p: (p.bbox_corners[0, 1], p.bbox_corners[0, 0]))
    return patches
