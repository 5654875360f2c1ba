import math

import numpy as np
import pytest

from lf4d.resample import (
    bicubic_resize_matrix,
    bicubic_upscale_matrix,
    gaussian_blur,
    gaussian_kernel,
    gaussian_kernel_1d,
    linear_upscale_matrix,
    resize_views,
    upsample_views,
)


class TestLinearUpscaleMatrix:
    def test_extent_rule(self):
        assert linear_upscale_matrix(3, 2).shape == (5, 3)
        assert linear_upscale_matrix(5, 3).shape == (13, 5)

    def test_identity_at_factor_one(self):
        assert np.array_equal(linear_upscale_matrix(4, 1), np.eye(4))

    def test_knot_rows_are_unit(self):
        m = linear_upscale_matrix(4, 3)
        for j in range(4):
            row = m[3 * j]
            assert row[j] == 1.0 and np.count_nonzero(row) == 1

    def test_reproduces_linear_ramp(self):
        m = linear_upscale_matrix(5, 4)
        ramp = np.arange(5.0)
        out = m @ ramp
        assert np.allclose(out, np.arange(17.0) / 4, atol=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            linear_upscale_matrix(1, 2)


class TestBicubicMatrices:
    def test_grid_anchored_unit_rows(self):
        m = bicubic_upscale_matrix(6, 2)
        assert m.shape == (12, 6)
        for j in range(6):
            assert m[2 * j, j] == 1.0 and np.count_nonzero(m[2 * j]) == 1

    def test_rows_sum_to_one(self):
        for m in (bicubic_upscale_matrix(7, 3), bicubic_resize_matrix(10, 8)):
            assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_reproduces_linear_interior(self):
        m = bicubic_upscale_matrix(16, 2)
        ramp = np.arange(16.0)
        out = m @ ramp
        expect = np.arange(32.0) / 2
        # edge-clamped rows deviate near the border; interior is exact
        assert np.allclose(out[4:-4], expect[4:-4], atol=1e-12)

    def test_resize_identity(self, rng):
        img = rng.random((3, 7, 9))
        assert np.allclose(resize_views(img, 7, 9), img, atol=1e-12)

    def test_upsample_views_shape(self, rng):
        img = rng.random((2, 5, 6))
        assert upsample_views(img, 3).shape == (2, 15, 18)


class TestGaussianKernel:
    def test_normalized(self):
        for window, sigma in ((7, 1.2), (11, 1.5), (3, 0.4)):
            assert abs(gaussian_kernel(window, sigma).sum() - 1.0) <= 1e-12

    def test_symmetry(self):
        k = gaussian_kernel(7, 1.2)
        assert np.array_equal(k, k.T)
        assert np.allclose(k, k[::-1, :], atol=0)
        assert np.allclose(k, k[:, ::-1], atol=0)

    def test_center_value_closed_form(self):
        window, sigma = 7, 1.2
        k = gaussian_kernel(window, sigma)
        offs = np.arange(-3, 4)
        g = np.exp(-(offs**2) / (2 * sigma**2))
        g /= g.sum()
        want = g[3] * g[3]
        assert abs(k[3, 3] - want) <= 1e-14

    def test_rejects_even_window_and_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_kernel(6, 1.0)
        with pytest.raises(ValueError):
            gaussian_kernel(7, 0.0)


class TestGaussianBlur:
    def test_constant_preserved(self):
        img = np.full((4, 10, 10), 0.6)
        out = gaussian_blur(img, 7, 1.2)
        assert np.allclose(out, 0.6, atol=1e-12)

    def test_matches_direct_convolution_interior(self, rng):
        img = rng.random((12, 12))
        k = gaussian_kernel(5, 1.0)
        out = gaussian_blur(img, 5, 1.0)
        # interior point: direct window sum
        want = float(np.sum(img[3:8, 4:9] * k))
        assert abs(out[5, 6] - want) <= 1e-12

    def test_separable_equals_full_2d(self, rng):
        img = rng.random((9, 9))
        out = gaussian_blur(img, 3, 0.8)
        k = gaussian_kernel(3, 0.8)
        padded = np.pad(img, 1, mode="reflect")
        want = np.zeros_like(img)
        for y in range(9):
            for x in range(9):
                want[y, x] = np.sum(padded[y:y + 3, x:x + 3] * k)
        assert np.allclose(out, want, atol=1e-12)
