"""Shared synthetic fixtures: poster textures and composed scenes."""

import cv2
import numpy as np
import pytest

from cloudtrack.image import ImageGray8
from cloudtrack.synth import make_poster


def paste_warped(
    canvas: np.ndarray, poster: ImageGray8, corners: np.ndarray
) -> np.ndarray:
    """Warp a poster onto canvas so its TL,TR,BR,BL land on ``corners``."""
    src = np.array(
        [[0, 0], [poster.width - 1, 0], [poster.width - 1, poster.height - 1], [0, poster.height - 1]],
        dtype=np.float32,
    )
    m = cv2.getPerspectiveTransform(src, corners.astype(np.float32))
    h, w = canvas.shape
    warped = cv2.warpPerspective(poster.pixels, m, (w, h), flags=cv2.INTER_LINEAR)
    mask = cv2.warpPerspective(np.full(poster.shape, 255, np.uint8), m, (w, h)) > 127
    out = canvas.copy()
    out[mask] = warped[mask]
    return out


@pytest.fixture(scope="session")
def poster_a() -> ImageGray8:
    return make_poster(101)


@pytest.fixture(scope="session")
def poster_b() -> ImageGray8:
    return make_poster(202)
