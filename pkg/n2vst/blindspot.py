"""
n2vst.blindspot — Blind-spot denoisers built by masking partition classes.

For a class J of the stride-k partition, the wrapped denoiser sees the image
with the pixels of J replaced by the mean of their neighbors (eta), and only
its outputs on J are kept. Since eta ignores the center pixel and two pixels
of one class are at least k >= 2 apart, the output at a pixel never depends
on that pixel's input.

eta averages the in-image neighbors of each pixel (8 in the interior, fewer
on borders). Replicating the border would feed an edge pixel back into its
own average.
"""

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from n2vst.denoisers import Denoiser
from n2vst.errors import ParameterError
from n2vst.image import ImageBuffer, check_same_shape
from n2vst.ops import neighbor_sum

ClassOffset = tuple[int, int]


@dataclass(frozen=True)
class Partition:
    stride: int = 4

    def __post_init__(self) -> None:
        if self.stride < 2:
            raise ParameterError(
                stage="partition",
                message=f"partition stride must be >= 2, got {self.stride}",
            )

    @property
    def classes(self) -> tuple[ClassOffset, ...]:
        k = self.stride
        return tuple((r, c) for r in range(k) for c in range(k))

    def __len__(self) -> int:
        return self.stride * self.stride

    def __iter__(self) -> Iterator[ClassOffset]:
        return iter(self.classes)

    def mask(self, shape: tuple[int, ...], offset: ClassOffset) -> NDArray[np.bool_]:
        """(H, W, 1) boolean mask of the class with origin `offset`."""
        r0, c0 = offset
        if not (0 <= r0 < self.stride and 0 <= c0 < self.stride):
            raise ParameterError(
                stage="partition",
                message=f"class {offset} outside a stride-{self.stride} partition",
            )
        mask = np.zeros(shape[:2] + (1,), dtype=bool)
        mask[r0::self.stride, c0::self.stride] = True
        return mask


@dataclass(frozen=True)
class BlindSpotResult:
    image: ImageBuffer
    mask: NDArray[np.bool_]  # (H, W, 1): pixels holding valid outputs


def _neighbor_counts(shape: tuple[int, ...]) -> NDArray[np.float64]:
    return neighbor_sum(np.ones(shape[:2] + (1,)))


def eta(img: ImageBuffer) -> ImageBuffer:
    """Mean of each pixel's in-image 3x3 neighbors, center excluded."""
    img = np.asarray(img, dtype=np.float64)
    return neighbor_sum(img) / _neighbor_counts(img.shape)


def eta_adjoint(g: ImageBuffer) -> ImageBuffer:
    g = np.asarray(g, dtype=np.float64)
    return neighbor_sum(g / _neighbor_counts(g.shape))


def _selected(partition: Partition, class_selector: ClassOffset | None) -> tuple[ClassOffset, ...]:
    return partition.classes if class_selector is None else (class_selector,)


def apply_blindspot(
    denoiser: Denoiser,
    img: ImageBuffer,
    sigma: float,
    class_selector: ClassOffset | None = None,
    partition: Partition | None = None,
) -> BlindSpotResult:
    """
    Blind-spot denoising of the selected class, or of every class when
    class_selector is None (the outputs are then assembled into a full image).
    """
    if partition is None:
        partition = Partition()
    img = np.asarray(img, dtype=np.float64)
    averaged = eta(img)
    out = np.zeros_like(img)
    covered = np.zeros(img.shape[:2] + (1,), dtype=bool)

    for offset in _selected(partition, class_selector):
        mask = partition.mask(img.shape, offset)
        denoised = denoiser.apply(np.where(mask, averaged, img), sigma)
        out = np.where(mask, denoised, out)
        covered |= mask

    return BlindSpotResult(image=out, mask=covered)


def vjp_blindspot(
    denoiser: Denoiser,
    img: ImageBuffer,
    sigma: float,
    cotangent: ImageBuffer,
    class_selector: ClassOffset | None = None,
    partition: Partition | None = None,
) -> ImageBuffer:
    """
    Adjoint of apply_blindspot's linearization at img.

    The cotangent is restricted to the selected classes. Per class, the
    denoiser's vjp is split between the pass-through pixels and the eta path
    feeding the masked pixels, so nothing flows back to a pixel from its own
    output.
    """
    img = np.asarray(img, dtype=np.float64)
    if partition is None:
        partition = Partition()
    cotangent = np.asarray(cotangent, dtype=np.float64)
    check_same_shape(img, cotangent, stage="vjp_blindspot")
    averaged = eta(img)
    grad = np.zeros_like(img)

    for offset in _selected(partition, class_selector):
        mask = partition.mask(img.shape, offset)
        hybrid = np.where(mask, averaged, img)
        g_hybrid = denoiser.vjp(hybrid, sigma, np.where(mask, cotangent, 0.0))
        grad += np.where(mask, 0.0, g_hybrid)
        grad += eta_adjoint(np.where(mask, g_hybrid, 0.0))

    return grad
