"""
n2vst.metrics — Image quality metrics.

PSNR in dB with an infinite sentinel for identical images, and single-scale
SSIM with the usual constants (11x11 Gaussian window, sigma 1.5, K1 = 0.01,
K2 = 0.03, data range 1), averaged over channels.
"""

import math

import numpy as np
from skimage.metrics import structural_similarity

from n2vst.errors import ShapeError
from n2vst.image import ImageBuffer, check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PSNR_INFINITY = math.inf


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    check_same_shape(a, b, stage="mse")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff * diff))


def psnr(a: ImageBuffer, b: ImageBuffer, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical images give +inf."""
    check_same_shape(a, b, stage="psnr")
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INFINITY
    return 10.0 * math.log10(peak * peak / err)


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    check_same_shape(a, b, stage="ssim")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, np.newaxis], b[:, :, np.newaxis]
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeError(
            stage="ssim",
            message=f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            payload={"shape": list(a.shape)},
        )

    # Per-channel scores summed left to right for thread-count-independent results.
    total = 0.0
    for c in range(a.shape[2]):
        total += float(
            structural_similarity(
                a[:, :, c],
                b[:, :, c],
                data_range=1.0,
                gaussian_weights=True,
                sigma=SSIM_SIGMA,
                use_sample_covariance=False,
                K1=SSIM_K1,
                K2=SSIM_K2,
            )
        )
    return total / a.shape[2]
