"""
n2vst — Zero-shot image denoising with a learned variance-stabilizing transform.

A monotone piecewise-linear transform and its corrected inverse are fit to a
single noisy image through a frozen blind-spot denoiser, then wrapped around
a classic Gaussian denoiser at inference.
"""

__version__ = "0.1.0"

from n2vst.config import N2vstConfig
from n2vst.trainer import TrainResult, infer, train
from n2vst.vst import PointGradient, Vst, grad

__all__ = [
    "N2vstConfig",
    "PointGradient",
    "TrainResult",
    "Vst",
    "grad",
    "infer",
    "train",
]
