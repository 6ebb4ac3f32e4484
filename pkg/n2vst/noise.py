"""
n2vst.noise — Synthetic Poisson-Gaussian noise and the GAT baseline.

Noise model: z = a * Poisson(s / a) + N(0, b), so var(z | s) = a s + b.
A Poisson level lambda maps to a = 1 / lambda, b = 0, i.e. z = Poisson(lambda s) / lambda.

The generalized Anscombe transform (GAT) stabilizes this noise to roughly unit
variance. Its exact-unbiased inverse is approximated in closed form, applied
in the normalized (a = 1) domain and rescaled by a.
"""

import csv
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from n2vst.config import NoiseConfig, NoiseKind
from n2vst.denoisers import Denoiser
from n2vst.errors import ImageWriteError, ParameterError
from n2vst.image import ImageBuffer
from n2vst.logger import get_logger
from n2vst.vst import Vst, format_number, forward_image

SQRT_3_2 = math.sqrt(1.5)
# The closed-form unbiased inverse is only accurate for w above ~0.8;
# pipeline outputs are floored there before inversion.
UNBIASED_FLOOR = 0.8

Transform = Callable[[NDArray[np.float64]], NDArray[np.float64]]


class InverseMode(str, Enum):
    ALGEBRAIC = "algebraic"
    UNBIASED = "unbiased"


@dataclass(frozen=True)
class PoissonGauss:
    a: float
    b: float = 0.0

    def __post_init__(self) -> None:
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ParameterError(stage="noise_model", message=f"a must be > 0, got {self.a}")
        if not (self.b >= 0 and math.isfinite(self.b)):
            raise ParameterError(stage="noise_model", message=f"b must be >= 0, got {self.b}")

    @classmethod
    def from_lambda(cls, lam: float, b: float = 0.0) -> "PoissonGauss":
        if not lam > 0:
            raise ParameterError(stage="noise_model", message=f"lambda must be > 0, got {lam}")
        return cls(a=1.0 / lam, b=b)

    def variance(self, s: ArrayLike) -> NDArray[np.float64]:
        return self.a * np.asarray(s, dtype=np.float64) + self.b


@dataclass(frozen=True)
class Gaussian:
    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ParameterError(
                stage="noise_model", message=f"sigma must be > 0, got {self.sigma}"
            )

    def variance(self, s: ArrayLike) -> NDArray[np.float64]:
        return np.full(np.shape(s), self.sigma**2)


NoiseModel = PoissonGauss | Gaussian


def noise_model_from_config(config: NoiseConfig) -> NoiseModel:
    if config.model == NoiseKind.GAUSS:
        if config.sigma is None:
            raise ParameterError(stage="noise_model", message="sigma is required")
        return Gaussian(config.sigma)
    if config.a is not None:
        return PoissonGauss(a=config.a, b=config.b)
    if config.lam is None:
        raise ParameterError(stage="noise_model", message="lambda or a is required")
    return PoissonGauss.from_lambda(config.lam, b=config.b)


def synthesize(clean: ImageBuffer, model: NoiseModel, rng: np.random.Generator) -> ImageBuffer:
    """Draw one noisy observation of `clean`, independently per pixel."""
    clean = np.asarray(clean, dtype=np.float64)
    if isinstance(model, Gaussian):
        return clean + rng.normal(0.0, model.sigma, size=clean.shape)

    if np.any(clean < 0):
        raise ParameterError(
            stage="synthesize",
            message="Poisson rates must be >= 0: clean image has negative samples",
            payload={"min": float(clean.min())},
        )
    noisy = model.a * rng.poisson(clean / model.a).astype(np.float64)
    if model.b > 0:
        noisy += rng.normal(0.0, math.sqrt(model.b), size=clean.shape)
    return noisy


def _scalar_or_array(value: NDArray[np.float64], like: Any) -> Any:
    return float(value) if np.ndim(like) == 0 else value


def gat_forward(z: ArrayLike, a: float, b: float) -> Any:
    """(2 / a) sqrt(max(a z + 3/8 a^2 + b, 0))."""
    arr = np.asarray(z, dtype=np.float64)
    radicand = np.maximum(a * arr + 0.375 * a * a + b, 0.0)
    return _scalar_or_array((2.0 / a) * np.sqrt(radicand), z)


def gat_inverse(w: ArrayLike, a: float, b: float, mode: InverseMode = InverseMode.UNBIASED) -> Any:
    """Algebraic or closed-form exact-unbiased inverse of gat_forward."""
    arr = np.asarray(w, dtype=np.float64)
    if mode == InverseMode.ALGEBRAIC:
        out = ((a * arr / 2.0) ** 2 - 0.375 * a * a - b) / a
        return _scalar_or_array(out, w)

    if np.any(arr <= 0):
        raise ParameterError(
            stage="gat_inverse",
            message="the unbiased inverse requires w > 0",
            payload={"min": float(arr.min())},
        )
    out = a * (
        arr**2 / 4.0
        - 0.125
        + (SQRT_3_2 / 4.0) / arr
        - (11.0 / 8.0) / arr**2
        + (5.0 / 8.0) * SQRT_3_2 / arr**3
        - b / (a * a)
    )
    return _scalar_or_array(out, w)


def gat_pipeline(
    z: ImageBuffer,
    a: float,
    b: float,
    denoiser: Denoiser,
    sigma_d: float,
    mode: InverseMode = InverseMode.UNBIASED,
) -> ImageBuffer:
    """
    Stabilize with the GAT, rescale by sigma_d so the denoiser sees its
    expected noise level, denoise, undo the rescale and invert.
    """
    stabilized = gat_forward(np.asarray(z, dtype=np.float64), a, b)
    denoised = denoiser.apply(stabilized * sigma_d, sigma_d) / sigma_d
    if mode == InverseMode.UNBIASED:
        denoised = np.maximum(denoised, UNBIASED_FLOOR)
    return gat_inverse(denoised, a, b, mode)


def identity_transform() -> Transform:
    return lambda z: z


def gat_transform(a: float, b: float) -> Transform:
    return lambda z: gat_forward(z, a, b)


def vst_transform(vsts: Sequence[Vst]) -> Transform:
    return lambda z: forward_image(vsts, z)


@dataclass(frozen=True)
class StabilizationProfile:
    bin_centers: NDArray[np.float64]
    stds: NDArray[np.float64]
    counts: NDArray[np.int64]
    dropped_bins: tuple[int, ...] = field(default_factory=tuple)

    @property
    def ratio(self) -> float:
        """Max over min bin standard deviation (1 = perfectly homoscedastic)."""
        return float(self.stds.max() / self.stds.min())

    @property
    def has_dropped_bins(self) -> bool:
        return bool(self.dropped_bins)


def stabilization_profile(
    transform: Transform,
    clean: ImageBuffer,
    model: NoiseModel,
    bins: int,
    draws: int,
    rng: np.random.Generator,
) -> StabilizationProfile:
    """
    Per-intensity noise level after `transform`.

    Pixels are binned by clean intensity; each pixel's variance of
    transform(z) is estimated over `draws` noise draws, averaged within its
    bin, and reported as a standard deviation.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if bins < 2:
        raise ParameterError(stage="stabilization_profile", message="bins must be >= 2")
    if draws < 2:
        raise ParameterError(stage="stabilization_profile", message="draws must be >= 2")
    lo, hi = float(clean.min()), float(clean.max())
    if not lo < hi:
        raise ParameterError(
            stage="stabilization_profile",
            message="clean image must span at least two intensity bins",
        )

    # Welford running moments per pixel.
    mean = np.zeros_like(clean)
    m2 = np.zeros_like(clean)
    for i in range(1, draws + 1):
        value = transform(synthesize(clean, model, rng))
        delta = value - mean
        mean += delta / i
        m2 += delta * (value - mean)
    variance = m2 / (draws - 1)

    edges = np.linspace(lo, hi, bins + 1)
    index = np.clip(np.searchsorted(edges, clean, side="right") - 1, 0, bins - 1).ravel()
    counts = np.bincount(index, minlength=bins)
    sums = np.bincount(index, weights=variance.ravel(), minlength=bins)

    dropped = tuple(int(i) for i in np.flatnonzero(counts == 0))
    if dropped:
        get_logger().warn(
            "Dropping empty intensity bins",
            stage="stabilization_profile",
            bins=list(dropped),
        )
    keep = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])
    return StabilizationProfile(
        bin_centers=centers[keep],
        stds=np.sqrt(sums[keep] / counts[keep]),
        counts=counts[keep],
        dropped_bins=dropped,
    )


def write_profile_csv(path: Path | str, profile: StabilizationProfile) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bin_center", "std", "count"])
            for center, std, count in zip(profile.bin_centers, profile.stds, profile.counts):
                writer.writerow([format_number(center), format_number(std), format_number(count)])
    except OSError as e:
        raise ImageWriteError(
            stage="stabilization_profile",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e
