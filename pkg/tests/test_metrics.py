"""Tests for n2vst.metrics."""

import math

import numpy as np
import pytest

from n2vst.errors import ShapeError
from n2vst.image import make_rng
from n2vst.metrics import mse, psnr, ssim


@pytest.fixture
def textured():
    return make_rng(7).random((24, 24, 1))


class TestPsnr:
    def test_identical_is_infinite(self, textured):
        assert psnr(textured, textured) == math.inf

    def test_mse_001(self):
        a = np.zeros((8, 8, 1))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_mse_1e4(self):
        a = np.zeros((8, 8, 1))
        assert psnr(a, a + 0.01) == pytest.approx(40.0)

    def test_symmetric(self, textured):
        other = textured + make_rng(8).normal(0, 0.05, textured.shape)
        assert psnr(textured, other) == psnr(other, textured)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)))

    def test_mse(self):
        assert mse(np.zeros((2, 2, 1)), np.full((2, 2, 1), 0.5)) == pytest.approx(0.25)


class TestSsim:
    def test_self_similarity(self, textured):
        assert ssim(textured, textured) == pytest.approx(1.0)

    def test_identical_constants(self):
        a = np.full((16, 16, 1), 0.5)
        assert ssim(a, a.copy()) == pytest.approx(1.0)

    def test_black_vs_white(self):
        k1, k2 = 0.01, 0.03
        expected = (k1**2 * k2**2) / ((1 + k1**2) * k2**2)

        value = ssim(np.zeros((16, 16, 1)), np.ones((16, 16, 1)))

        assert value == pytest.approx(expected, rel=1e-3)

    def test_channel_average(self, textured):
        noisy = textured + make_rng(1).normal(0, 0.1, textured.shape)
        rgb_a = np.concatenate([textured, textured, textured], axis=2)
        rgb_b = np.concatenate([noisy, textured, textured], axis=2)

        assert ssim(rgb_a, rgb_b) == pytest.approx((ssim(textured, noisy) + 2.0) / 3.0)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8, 1)), np.zeros((8, 8, 1)))
