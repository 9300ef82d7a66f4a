"""Raster op tests: block-mean downsampling and Gaussian smoothing."""

import numpy as np
import pytest

from cloudtrack.errors import InvalidArgument
from cloudtrack.image import ImageGray8, downsample, gaussian_blur, load_image, save_image


def _random_image(w, h, seed=0):
    rng = np.random.default_rng(seed)
    return ImageGray8(rng.integers(0, 256, (h, w)).astype(np.uint8))


class TestDownsample:
    def test_factor_one_is_identity(self):
        img = _random_image(17, 13)
        out = downsample(img, 1)
        assert np.array_equal(out.pixels, img.pixels)
        assert out.pixels is not img.pixels

    def test_constant_invariance(self):
        img = ImageGray8.constant(4, 4, 100)
        out = downsample(img, 2)
        assert out.shape == (2, 2)
        assert np.all(out.pixels == 100)

    def test_block_mean_oracle(self):
        # independent oracle: explicit per-block loop with half-up rounding
        img = _random_image(64, 48, seed=7)
        out = downsample(img, 2)
        assert out.shape == (24, 32)
        for i in range(24):
            for j in range(32):
                block = img.pixels[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                expected = int(np.floor(block.astype(np.float64).mean() + 0.5))
                assert out.pixels[i, j] == expected, (i, j)

    def test_odd_dims_floor(self):
        img = _random_image(7, 5)
        out = downsample(img, 2)
        assert out.shape == (2, 3)

    def test_zero_factor_rejected(self):
        with pytest.raises(InvalidArgument):
            downsample(_random_image(8, 8), 0)

    def test_oversize_factor_rejected(self):
        with pytest.raises(InvalidArgument):
            downsample(_random_image(8, 8), 9)

    def test_composition_on_constant(self):
        img = ImageGray8.constant(24, 24, 57)
        once = downsample(downsample(img, 2), 3)
        combined = downsample(img, 6)
        assert np.array_equal(once.pixels, combined.pixels)

    def test_input_unmodified(self):
        img = _random_image(16, 16)
        before = img.pixels.copy()
        downsample(img, 2)
        assert np.array_equal(img.pixels, before)


class TestGaussianBlur:
    def test_constant_invariance(self):
        img = ImageGray8.constant(20, 15, 77)
        for sigma in (0.5, 1.0, 3.0):
            out = gaussian_blur(img, sigma)
            assert np.all(out.pixels == 77)

    def test_impulse_matches_direct_convolution(self):
        # independent oracle: dense 2D convolution with replicated border
        sigma = 1.0
        size = 21
        img = ImageGray8.constant(size, size, 0)
        img.pixels[10, 10] = 200
        out = gaussian_blur(img, sigma)

        radius = int(np.ceil(3 * sigma))
        xs = np.arange(-radius, radius + 1)
        k1 = np.exp(-(xs**2) / (2 * sigma**2))
        k1 /= k1.sum()
        k2 = np.outer(k1, k1)
        padded = np.pad(img.pixels.astype(np.float64), radius, mode="edge")
        expected = np.zeros((size, size))
        for i in range(size):
            for j in range(size):
                expected[i, j] = (padded[i : i + 2 * radius + 1, j : j + 2 * radius + 1] * k2).sum()
        assert np.abs(out.pixels.astype(np.float64) - expected).max() <= 1.0

    def test_impulse_symmetric_and_mass_preserving(self):
        img = ImageGray8.constant(31, 31, 0)
        img.pixels[15, 15] = 255
        out = gaussian_blur(img, 1.0).pixels.astype(np.int64)
        assert np.array_equal(out, out.T)
        assert np.array_equal(out, out[::-1, :])
        # mass preserved within per-pixel rounding of the touched window
        touched = (out > 0).sum() + 8
        assert abs(out.sum() - 255) <= touched

    def test_larger_sigma_flattens_step_edge(self):
        img = ImageGray8.constant(40, 20, 0)
        img.pixels[:, 20:] = 255
        grad_small = np.abs(np.diff(gaussian_blur(img, 0.5).pixels.astype(int), axis=1)).max()
        grad_large = np.abs(np.diff(gaussian_blur(img, 3.0).pixels.astype(int), axis=1)).max()
        assert grad_large < grad_small

    def test_commutes_with_transpose(self):
        img = _random_image(33, 21, seed=3)
        a = gaussian_blur(img, 1.5).pixels.T
        b = gaussian_blur(ImageGray8(img.pixels.T.copy()), 1.5).pixels
        assert np.array_equal(a, b)

    def test_nonpositive_sigma_rejected(self):
        for sigma in (0.0, -1.0):
            with pytest.raises(InvalidArgument):
                gaussian_blur(_random_image(8, 8), sigma)


class TestContainer:
    def test_from_rgb_bt601(self):
        rgb = np.zeros((1, 3, 3), dtype=np.uint8)
        rgb[0, 0] = (255, 0, 0)
        rgb[0, 1] = (0, 255, 0)
        rgb[0, 2] = (0, 0, 255)
        gray = ImageGray8.from_rgb(rgb)
        assert gray.pixels[0, 0] == int(np.floor(0.299 * 255 + 0.5))
        assert gray.pixels[0, 1] == int(np.floor(0.587 * 255 + 0.5))
        assert gray.pixels[0, 2] == int(np.floor(0.114 * 255 + 0.5))

    def test_rejects_bad_shapes(self):
        with pytest.raises(InvalidArgument):
            ImageGray8(np.zeros((3, 3), dtype=np.float32))
        with pytest.raises(InvalidArgument):
            ImageGray8(np.zeros((0, 3), dtype=np.uint8))

    def test_png_and_pgm_round_trip(self, tmp_path):
        img = _random_image(12, 9, seed=11)
        for name in ("img.png", "img.pgm"):
            path = str(tmp_path / name)
            save_image(img, path)
            back = load_image(path)
            assert np.array_equal(back.pixels, img.pixels)
