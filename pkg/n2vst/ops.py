"""
n2vst.ops — Linear image operators with exact adjoints.

Arrays are laid out (height, width, ...). Each forward operator has an
`*_adjoint` companion such that <A x, g> == <x, A^T g>, which is what the
denoiser and blind-spot vector-Jacobian products are built from.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray
from scipy import ndimage

Padding = tuple[int, int, int, int]  # top, bottom, left, right


def pad_edge(x: NDArray[np.float64], pad: Padding) -> NDArray[np.float64]:
    """Replicate-pad the two spatial axes."""
    top, bottom, left, right = pad
    widths = [(top, bottom), (left, right)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths, mode="edge")


def pad_edge_adjoint(g: NDArray[np.float64], pad: Padding) -> NDArray[np.float64]:
    """Fold replicated border cotangents back onto the edge pixels."""
    top, bottom, left, right = pad
    height = g.shape[0] - top - bottom
    width = g.shape[1] - left - right

    rows = g[top:top + height].copy()
    if top:
        rows[0] += g[:top].sum(axis=0)
    if bottom:
        rows[-1] += g[top + height:].sum(axis=0)

    out = rows[:, left:left + width].copy()
    if left:
        out[:, 0] += rows[:, :left].sum(axis=1)
    if right:
        out[:, -1] += rows[:, left + width:].sum(axis=1)
    return out


def correlate1d_valid(
    x: NDArray[np.float64],
    weights: NDArray[np.float64],
    axis: int,
) -> NDArray[np.float64]:
    """out[i] = sum_k weights[k] * x[i + k] along `axis` (no padding)."""
    taps = weights.size
    length = x.shape[axis] - taps + 1
    full = ndimage.correlate1d(x, weights, axis=axis, mode="constant")
    return np.take(full, np.arange(taps // 2, taps // 2 + length), axis=axis)


def correlate1d_valid_adjoint(
    g: NDArray[np.float64],
    weights: NDArray[np.float64],
    axis: int,
) -> NDArray[np.float64]:
    """Full convolution: the valid correlation of the zero-padded cotangent with reversed taps."""
    taps = weights.size
    widths = [(0, 0)] * g.ndim
    widths[axis] = (taps - 1, taps - 1)
    return correlate1d_valid(np.pad(g, widths), weights[::-1], axis)


def conv2d_valid(x: NDArray[np.float64], kernel: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    Multi-channel valid cross-correlation.

    x: (H, W, C_in), kernel: (C_out, C_in, k, k) -> (H - k + 1, W - k + 1, C_out).
    """
    size = kernel.shape[-1]
    windows = sliding_window_view(x, (size, size), axis=(0, 1))  # (H', W', C_in, k, k)
    return np.einsum("hwcij,ocij->hwo", windows, kernel, optimize=True)


def conv2d_valid_adjoint(g: NDArray[np.float64], kernel: NDArray[np.float64]) -> NDArray[np.float64]:
    """Adjoint of conv2d_valid with respect to its input."""
    size = kernel.shape[-1]
    height, width = g.shape[0] + size - 1, g.shape[1] + size - 1
    out = np.zeros((height, width, kernel.shape[1]))
    for i in range(size):
        for j in range(size):
            out[i:i + g.shape[0], j:j + g.shape[1]] += g @ kernel[:, :, i, j]
    return out


def neighbor_sum(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum of the 8 neighbors of every pixel, zero outside the image (self-adjoint)."""
    ring = np.ones((3, 3))
    ring[1, 1] = 0.0
    return ndimage.correlate(x, ring.reshape((3, 3) + (1,) * (x.ndim - 2)), mode="constant")
