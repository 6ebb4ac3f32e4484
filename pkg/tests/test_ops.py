"""Tests for n2vst.ops."""

import numpy as np
import pytest
from scipy import ndimage

from n2vst.image import make_rng
from n2vst.ops import (
    conv2d_valid,
    conv2d_valid_adjoint,
    correlate1d_valid,
    correlate1d_valid_adjoint,
    neighbor_sum,
    pad_edge,
    pad_edge_adjoint,
)


@pytest.fixture
def rng():
    return make_rng(42)


def inner(a, b):
    return float(np.sum(a * b))


class TestAdjoints:
    def test_pad_edge(self, rng):
        pad = (2, 1, 0, 3)
        x = rng.random((5, 6, 2))
        g = rng.random((8, 9, 2))

        assert inner(pad_edge(x, pad), g) == pytest.approx(inner(x, pad_edge_adjoint(g, pad)))

    def test_pad_edge_single_row(self, rng):
        pad = (2, 2, 1, 1)
        x = rng.random((1, 4, 1))
        g = rng.random((5, 6, 1))

        assert inner(pad_edge(x, pad), g) == pytest.approx(inner(x, pad_edge_adjoint(g, pad)))

    def test_correlate1d(self, rng):
        w = rng.random(5)
        for axis in (0, 1):
            x = rng.random((12, 10, 1))
            out = correlate1d_valid(x, w, axis)
            g = rng.random(out.shape)

            assert inner(out, g) == pytest.approx(inner(x, correlate1d_valid_adjoint(g, w, axis)))

    def test_conv2d(self, rng):
        kernel = rng.normal(size=(4, 2, 3, 3))
        x = rng.random((9, 8, 2))
        out = conv2d_valid(x, kernel)
        g = rng.random(out.shape)

        assert out.shape == (7, 6, 4)
        assert inner(out, g) == pytest.approx(inner(x, conv2d_valid_adjoint(g, kernel)))

    def test_neighbor_sum_self_adjoint(self, rng):
        x = rng.random((7, 6, 3))
        g = rng.random((7, 6, 3))

        assert inner(neighbor_sum(x), g) == pytest.approx(inner(x, neighbor_sum(g)))


class TestCorrelate1d:
    def test_known_values(self):
        x = np.arange(5.0)[:, None, None]
        out = correlate1d_valid(x, np.array([1.0, 0.0, -1.0]), axis=0)

        np.testing.assert_array_equal(out[:, 0, 0], [-2.0, -2.0, -2.0])

    def test_even_taps(self):
        x = np.arange(6.0)[None, :, None]
        out = correlate1d_valid(x, np.array([2.0, 1.0]), axis=1)

        np.testing.assert_array_equal(out[0, :, 0], [1.0, 4.0, 7.0, 10.0, 13.0])

    def test_edge_padded_matches_nearest_mode(self, rng):
        x = rng.random((9, 7, 2))
        w = np.array([0.25, 0.5, 0.25])

        out = correlate1d_valid(pad_edge(x, (1, 1, 0, 0)), w, axis=0)
        np.testing.assert_allclose(out, ndimage.correlate1d(x, w, axis=0, mode="nearest"))

    def test_adjoint_known_values(self):
        g = np.array([1.0, 2.0])[:, None, None]
        out = correlate1d_valid_adjoint(g, np.array([1.0, 10.0, 100.0]), axis=0)

        np.testing.assert_array_equal(out[:, 0, 0], [1.0, 12.0, 120.0, 200.0])


class TestNeighborSum:
    def test_corner_and_center(self):
        x = np.ones((3, 3, 1))
        out = neighbor_sum(x)[:, :, 0]

        assert out[0, 0] == 3.0
        assert out[1, 1] == 8.0
