"""Grayscale image container and low-level raster operations.

Everything downstream (tracking, segmentation, retrieval) works on 8-bit
single-channel images. Color input is converted on ingestion with BT.601
luma weights; convolutions replicate the border so corners near the frame
edge keep their response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import cv2
import numpy as np
from scipy import ndimage

from .errors import InvalidArgument

__all__ = [
    "ImageGray8",
    "Point2",
    "downsample",
    "gaussian_blur",
    "load_image",
    "save_image",
]


class Point2(NamedTuple):
    """Sub-pixel image coordinate (column x, row y)."""

    x: float
    y: float


@dataclass(frozen=True)
class ImageGray8:
    """Row-major 8-bit intensity raster.

    ``pixels`` is a (height, width) uint8 array. Operations treat images as
    values: they never mutate their input and return fresh arrays.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.ndim != 2:
            raise InvalidArgument("ImageGray8 requires a 2-D uint8 array")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgument("image must be at least 1x1")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def copy(self) -> "ImageGray8":
        return ImageGray8(self.pixels.copy())

    @staticmethod
    def from_array(arr: np.ndarray) -> "ImageGray8":
        """Wrap an array, clipping and rounding to uint8 if needed."""
        arr = np.asarray(arr)
        if arr.dtype == np.uint8:
            return ImageGray8(arr.copy())
        return ImageGray8(np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8))

    @staticmethod
    def from_rgb(rgb: np.ndarray) -> "ImageGray8":
        """Convert an (H, W, 3) RGB array using BT.601 luma weights."""
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise InvalidArgument("expected an (H, W, 3) RGB array")
        luma = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
        return ImageGray8.from_array(luma)

    @staticmethod
    def constant(width: int, height: int, value: int = 0) -> "ImageGray8":
        return ImageGray8(np.full((height, width), value, dtype=np.uint8))


def downsample(img: ImageGray8, factor: int) -> ImageGray8:
    """Shrink by an integer factor; each output pixel is its block mean.

    Output dimensions are floor(input / factor); trailing rows/columns that
    do not fill a block are dropped. Block means round half-up.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidArgument(f"downsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return img.copy()
    out_h = img.height // factor
    out_w = img.width // factor
    if out_h < 1 or out_w < 1:
        raise InvalidArgument(f"factor {factor} leaves no pixels for a {img.width}x{img.height} image")
    cropped = img.pixels[: out_h * factor, : out_w * factor].astype(np.float64)
    blocks = cropped.reshape(out_h, factor, out_w, factor)
    means = blocks.mean(axis=(1, 3))
    return ImageGray8(np.floor(means + 0.5).astype(np.uint8))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(img: ImageGray8, sigma: float) -> ImageGray8:
    """Separable Gaussian smoothing with kernel radius ceil(3*sigma).

    The border is replicated, so a constant image stays constant and edge
    responses are not darkened.
    """
    if not (sigma > 0):
        raise InvalidArgument(f"sigma must be positive, got {sigma!r}")
    kernel = _gaussian_kernel(sigma)
    work = img.pixels.astype(np.float64)
    work = ndimage.correlate1d(work, kernel, axis=0, mode="nearest")
    work = ndimage.correlate1d(work, kernel, axis=1, mode="nearest")
    return ImageGray8(np.clip(np.floor(work + 0.5), 0, 255).astype(np.uint8))


def load_image(path: str) -> ImageGray8:
    """Read a PNG or PGM file as grayscale (color files go through BT.601)."""
    data = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if data is None:
        raise InvalidArgument(f"cannot read image file: {path}")
    return ImageGray8(data.astype(np.uint8))


def save_image(img: ImageGray8, path: str) -> None:
    if not cv2.imwrite(str(path), img.pixels):
        raise InvalidArgument(f"cannot write image file: {path}")
