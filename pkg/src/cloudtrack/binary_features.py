"""Server-side keypoints and binary descriptors.

Detection is the accelerated segment test (16-pixel Bresenham circle, 9
contiguous brighter/darker pixels) run over a 4-octave block-mean pyramid
with non-max suppression, i.e. the AGAST/FAST family decision. Description
is a retina-style pattern of 43 box-smoothed receptive fields compared over
512 fixed pairs, with orientation normalization from the 45 longest pairs.

The 512 comparison pairs are selected deterministically from the pattern
geometry (longest inter-field distance first, with per-field usage balanced)
so no training data is needed and every run produces identical bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .image import ImageGray8, downsample

__all__ = [
    "AgastConfig",
    "Keypoint",
    "Descriptor512",
    "DescriptorArray",
    "MatchPair",
    "MatchConfig",
    "detect_agast",
    "extract_freak",
    "match_descriptors",
    "hamming_matrix",
]

DESCRIPTOR_BITS = 512

# 16-pixel Bresenham circle of radius 3, clockwise from 12 o'clock
_CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)
_ARC = 9  # contiguous run length required for a corner
_COMPASS = (0, 4, 8, 12)


@dataclass(frozen=True)
class AgastConfig:
    threshold: int = 20
    octaves: int = 4
    max_keypoints: int = 500


@dataclass(frozen=True)
class Keypoint:
    """Corner location in full-resolution coordinates."""

    x: float
    y: float
    octave: int
    score: float


@dataclass(frozen=True)
class Descriptor512:
    """One 512-bit descriptor (bits packed into 64 bytes) and its keypoint."""

    bits: np.ndarray  # (64,) uint8
    keypoint: tuple[float, float]
    octave: int
    orientation: float


class DescriptorArray:
    """Column-oriented batch of descriptors; behaves as a sequence of Descriptor512."""

    def __init__(
        self,
        bits: np.ndarray,
        xy: np.ndarray,
        octave: np.ndarray,
        orientation: np.ndarray,
    ):
        self.bits = np.asarray(bits, dtype=np.uint8).reshape(-1, DESCRIPTOR_BITS // 8)
        self.xy = np.asarray(xy, dtype=np.float32).reshape(-1, 2)
        self.octave = np.asarray(octave, dtype=np.int8).reshape(-1)
        self.orientation = np.asarray(orientation, dtype=np.float32).reshape(-1)
        n = self.bits.shape[0]
        if not (self.xy.shape[0] == self.octave.shape[0] == self.orientation.shape[0] == n):
            raise InvalidArgument("descriptor column lengths disagree")

    def __len__(self) -> int:
        return self.bits.shape[0]

    def __getitem__(self, i: int) -> Descriptor512:
        return Descriptor512(
            bits=self.bits[i].copy(),
            keypoint=(float(self.xy[i, 0]), float(self.xy[i, 1])),
            octave=int(self.octave[i]),
            orientation=float(self.orientation[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @staticmethod
    def empty() -> "DescriptorArray":
        return DescriptorArray(
            np.empty((0, 64), np.uint8),
            np.empty((0, 2), np.float32),
            np.empty((0,), np.int8),
            np.empty((0,), np.float32),
        )

    @staticmethod
    def concatenate(parts: list["DescriptorArray"]) -> "DescriptorArray":
        parts = [p for p in parts if len(p) > 0]
        if not parts:
            return DescriptorArray.empty()
        return DescriptorArray(
            np.concatenate([p.bits for p in parts]),
            np.concatenate([p.xy for p in parts]),
            np.concatenate([p.octave for p in parts]),
            np.concatenate([p.orientation for p in parts]),
        )


@dataclass(frozen=True)
class MatchPair:
    query_idx: int
    reference_idx: int
    hamming: int


@dataclass(frozen=True)
class MatchConfig:
    max_hamming: int = 96
    ratio: float = 0.8


def _octave_images(img: ImageGray8, octaves: int) -> list[ImageGray8]:
    out = [img]
    for _ in range(1, octaves):
        prev = out[-1]
        if prev.width < 14 or prev.height < 14:
            break
        out.append(downsample(prev, 2))
    return out


def _segment_test_octave(px: np.ndarray, threshold: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner test on one pyramid level; returns (xs, ys, scores) in level coords."""
    h, w = px.shape
    if h < 7 or w < 7:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64)
    img = px.astype(np.int16)
    center = img[3 : h - 3, 3 : w - 3]
    ring = np.empty((16,) + center.shape, dtype=np.int16)
    for i, (dx, dy) in enumerate(_CIRCLE):
        ring[i] = img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
    hi = center + threshold
    lo = center - threshold

    # cheap necessary condition: a 9-run must cover >= 2 compass positions
    bright_c = sum((ring[i] > hi).astype(np.int8) for i in _COMPASS)
    dark_c = sum((ring[i] < lo).astype(np.int8) for i in _COMPASS)
    cand_y, cand_x = np.nonzero((bright_c >= 2) | (dark_c >= 2))
    if cand_y.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64)

    ring_c = ring[:, cand_y, cand_x]  # (16, M)
    hi_c = hi[cand_y, cand_x]
    lo_c = lo[cand_y, cand_x]

    def run9(flags: np.ndarray) -> np.ndarray:
        wrapped = np.concatenate([flags, flags[: _ARC - 1]], axis=0).astype(np.int8)
        csum = np.zeros((wrapped.shape[0] + 1, flags.shape[1]), dtype=np.int16)
        np.cumsum(wrapped, axis=0, out=csum[1:])
        windows = csum[_ARC:] - csum[:-_ARC]  # sums of 9 consecutive, 16 start offsets
        return (windows == _ARC).any(axis=0)

    bright = ring_c > hi_c
    dark = ring_c < lo_c
    is_corner = run9(bright) | run9(dark)
    if not is_corner.any():
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.float64)

    keep = np.nonzero(is_corner)[0]
    rc = ring_c[:, keep].astype(np.int32)
    score = np.maximum(
        np.where(rc > hi_c[keep], rc - hi_c[keep], 0).sum(axis=0),
        np.where(rc < lo_c[keep], lo_c[keep] - rc, 0).sum(axis=0),
    ).astype(np.float64)

    # non-max suppression over a 3x3 neighborhood of the score map
    ys = cand_y[keep]
    xs = cand_x[keep]
    score_map = np.zeros(center.shape, dtype=np.float64)
    score_map[ys, xs] = score
    padded = np.pad(score_map, 1, mode="constant")
    neighborhood = np.max(
        [padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
         for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
        axis=0,
    )
    maximal = score >= neighborhood[ys, xs]
    ys, xs, score = ys[maximal], xs[maximal], score[maximal]
    return xs + 3, ys + 3, score


def detect_agast(img: ImageGray8, cfg: AgastConfig | None = None) -> list[Keypoint]:
    """Multi-scale segment-test corners, strongest max_keypoints overall."""
    cfg = cfg or AgastConfig()
    if img.width < 48 or img.height < 48:
        raise InvalidArgument("image must be at least 48x48 for pattern support")
    found: list[tuple[float, int, float, float]] = []
    for octave, level in enumerate(_octave_images(img, cfg.octaves)):
        xs, ys, scores = _segment_test_octave(level.pixels, cfg.threshold)
        f = float(1 << octave)
        half = (f - 1.0) / 2.0
        for x, y, s in zip(xs, ys, scores):
            found.append((float(s), octave, x * f + half, y * f + half))
    found.sort(key=lambda r: (-r[0], r[1], r[3], r[2]))
    return [
        Keypoint(x=x, y=y, octave=octave, score=s)
        for s, octave, x, y in found[: cfg.max_keypoints]
    ]


# --- retinal descriptor pattern -------------------------------------------

_PATTERN_SCALE = 22.0
_RING_COUNTS = (6, 6, 6, 6, 6, 6, 6, 1)
_BIG_R = 2.0 / 3.0
_SMALL_R = 2.0 / 24.0
_UNIT = (_BIG_R - _SMALL_R) / 21.0
_RING_RADII = (
    _BIG_R,
    _BIG_R - 6 * _UNIT,
    _BIG_R - 11 * _UNIT,
    _BIG_R - 15 * _UNIT,
    _BIG_R - 18 * _UNIT,
    _BIG_R - 20 * _UNIT,
    _SMALL_R,
    0.0,
)
_RING_SIGMAS = tuple(r / 2.0 for r in _RING_RADII[:7]) + (_RING_RADII[6] / 2.0,)


def _build_pattern() -> tuple[np.ndarray, np.ndarray]:
    """43 receptive fields as (x, y) offsets and box half-sizes, pattern units."""
    points = []
    sigmas = []
    for ring, count in enumerate(_RING_COUNTS):
        phase = math.pi / count * (ring % 2)
        for k in range(count):
            theta = phase + 2.0 * math.pi * k / count
            points.append((_RING_RADII[ring] * math.cos(theta), _RING_RADII[ring] * math.sin(theta)))
            sigmas.append(_RING_SIGMAS[ring])
    return np.array(points, dtype=np.float64), np.array(sigmas, dtype=np.float64)


_FIELD_XY, _FIELD_SIGMA = _build_pattern()
_N_FIELDS = _FIELD_XY.shape[0]
assert _N_FIELDS == 43


def _select_pairs() -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (orientation_pairs, comparison_pairs) from the geometry.

    Orientation uses the 45 longest pairs. The 512 comparison pairs are the
    longest remaining pairs subject to a per-field usage cap, which spreads
    comparisons across all rings.
    """
    pairs = [(i, j) for i in range(_N_FIELDS) for j in range(i + 1, _N_FIELDS)]
    dist = {  # squared center distance is enough for ordering
        (i, j): float(((_FIELD_XY[i] - _FIELD_XY[j]) ** 2).sum()) for i, j in pairs
    }
    ordered = sorted(pairs, key=lambda p: (-dist[p], p))
    orientation = np.array(ordered[:45], dtype=np.int64)

    usage = np.zeros(_N_FIELDS, dtype=np.int64)
    cap = math.ceil(2 * DESCRIPTOR_BITS / _N_FIELDS)
    chosen: list[tuple[int, int]] = []
    remaining = list(ordered)
    while len(chosen) < DESCRIPTOR_BITS:
        still_open = []
        for p in remaining:
            if len(chosen) < DESCRIPTOR_BITS and usage[p[0]] < cap and usage[p[1]] < cap:
                chosen.append(p)
                usage[p[0]] += 1
                usage[p[1]] += 1
            else:
                still_open.append(p)
        remaining = still_open
        cap += 4  # relax the balance cap until 512 pairs are placed
    return orientation, np.array(chosen[:DESCRIPTOR_BITS], dtype=np.int64)


_ORIENT_PAIRS, _COMP_PAIRS = _select_pairs()
_ORIENT_DIR = _FIELD_XY[_ORIENT_PAIRS[:, 0]] - _FIELD_XY[_ORIENT_PAIRS[:, 1]]
_ORIENT_DIR /= np.linalg.norm(_ORIENT_DIR, axis=1, keepdims=True)


def _integral(px: np.ndarray) -> np.ndarray:
    s = np.zeros((px.shape[0] + 1, px.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(px, axis=0, dtype=np.float64), axis=1, out=s[1:, 1:])
    return s


def _box_means(integral: np.ndarray, cx: np.ndarray, cy: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Mean intensity over clamped integer boxes centered at (cx, cy)."""
    h = integral.shape[0] - 1
    w = integral.shape[1] - 1
    x0 = np.clip(np.floor(cx - half + 0.5).astype(np.int64), 0, w - 1)
    x1 = np.clip(np.floor(cx + half + 0.5).astype(np.int64) + 1, 1, w)
    y0 = np.clip(np.floor(cy - half + 0.5).astype(np.int64), 0, h - 1)
    y1 = np.clip(np.floor(cy + half + 0.5).astype(np.int64) + 1, 1, h)
    x1 = np.maximum(x1, x0 + 1)
    y1 = np.maximum(y1, y0 + 1)
    total = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    return total / ((x1 - x0) * (y1 - y0))


def _sample_fields(
    integral: np.ndarray, kx: np.ndarray, ky: np.ndarray, cos_t: np.ndarray, sin_t: np.ndarray
) -> np.ndarray:
    """Field means for keypoints at orientations theta; result (43, N)."""
    fx = _FIELD_XY[:, 0][:, None] * _PATTERN_SCALE
    fy = _FIELD_XY[:, 1][:, None] * _PATTERN_SCALE
    rx = fx * cos_t[None, :] - fy * sin_t[None, :]
    ry = fx * sin_t[None, :] + fy * cos_t[None, :]
    half = np.maximum(_FIELD_SIGMA[:, None] * _PATTERN_SCALE, 0.5)
    half = np.broadcast_to(half, rx.shape)
    return _box_means(integral, kx[None, :] + rx, ky[None, :] + ry, half)


def extract_freak(
    img: ImageGray8, keypoints: list[Keypoint], octaves: int = 4
) -> tuple[DescriptorArray, int]:
    """Describe keypoints; returns (descriptors, dropped_border_count).

    Keypoints without full pattern support inside the image are dropped.
    """
    if not keypoints:
        return DescriptorArray.empty(), 0
    levels = _octave_images(img, octaves)
    support = _PATTERN_SCALE * (_BIG_R + _RING_SIGMAS[0]) + 2.0
    parts: list[DescriptorArray] = []
    dropped = 0
    for octave in range(len(levels)):
        batch = [kp for kp in keypoints if kp.octave == octave]
        if not batch:
            continue
        level = levels[octave]
        f = float(1 << octave)
        half_shift = (f - 1.0) / 2.0
        kx = np.array([(kp.x - half_shift) / f for kp in batch])
        ky = np.array([(kp.y - half_shift) / f for kp in batch])
        ok = (
            (kx >= support)
            & (kx <= level.width - 1 - support)
            & (ky >= support)
            & (ky <= level.height - 1 - support)
        )
        dropped += int((~ok).sum())
        if not ok.any():
            continue
        kx, ky = kx[ok], ky[ok]
        kept = [kp for kp, good in zip(batch, ok) if good]
        integral = _integral(level.pixels)

        zeros = np.zeros(kx.shape[0])
        upright = _sample_fields(integral, kx, ky, np.cos(zeros), np.sin(zeros))
        diffs = upright[_ORIENT_PAIRS[:, 0]] - upright[_ORIENT_PAIRS[:, 1]]  # (45, N)
        gx = (diffs * _ORIENT_DIR[:, 0][:, None]).sum(axis=0)
        gy = (diffs * _ORIENT_DIR[:, 1][:, None]).sum(axis=0)
        theta = np.arctan2(gy, gx)

        fields = _sample_fields(integral, kx, ky, np.cos(theta), np.sin(theta))
        bits = fields[_COMP_PAIRS[:, 0]] > fields[_COMP_PAIRS[:, 1]]  # (512, N)
        packed = np.packbits(bits.T.astype(np.uint8), axis=1)
        parts.append(
            DescriptorArray(
                bits=packed,
                xy=np.array([[kp.x, kp.y] for kp in kept], dtype=np.float32),
                octave=np.array([kp.octave for kp in kept], dtype=np.int8),
                orientation=theta.astype(np.float32),
            )
        )
    dropped += sum(1 for kp in keypoints if kp.octave >= len(levels))
    return DescriptorArray.concatenate(parts), dropped


def _as_bits(descs) -> np.ndarray:
    if isinstance(descs, DescriptorArray):
        return descs.bits
    if isinstance(descs, np.ndarray):
        return np.asarray(descs, dtype=np.uint8).reshape(-1, 64)
    return np.stack([np.asarray(d.bits, dtype=np.uint8) for d in descs])


def hamming_matrix(query, reference) -> np.ndarray:
    """Pairwise Hamming distances between two descriptor batches."""
    a = _as_bits(query)
    b = _as_bits(reference)
    xor = a[:, None, :] ^ b[None, :, :]
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int32)


def match_descriptors(query, reference, cfg: MatchConfig | None = None) -> list[MatchPair]:
    """Mutual-best Hamming matches passing the distance and ratio gates."""
    cfg = cfg or MatchConfig()
    a = _as_bits(query)
    b = _as_bits(reference)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidArgument("descriptor lists must be non-empty")
    d = hamming_matrix(a, b)
    best_ref = d.argmin(axis=1)
    best_d = d[np.arange(d.shape[0]), best_ref]
    if d.shape[1] > 1:
        masked = d.copy()
        masked[np.arange(d.shape[0]), best_ref] = np.iinfo(np.int32).max
        second_d = masked.min(axis=1).astype(np.float64)
    else:
        second_d = np.full(d.shape[0], np.inf)
    best_query = d.argmin(axis=0)
    keep = (
        (best_d <= cfg.max_hamming)
        & (best_d < cfg.ratio * second_d)
        & (best_query[best_ref] == np.arange(d.shape[0]))
    )
    return [
        MatchPair(query_idx=int(q), reference_idx=int(best_ref[q]), hamming=int(best_d[q]))
        for q in np.nonzero(keep)[0]
    ]
