"""
n2vst.denoisers — Frozen Gaussian denoisers with exact vector-Jacobian products.

Every denoiser maps an (H, W, C) image and a noise level sigma (in [0, 1]
units) to an image of the same shape, and exposes vjp(img, sigma, cotangent)
= J^T cotangent for the Jacobian J of apply at img. Borders are replicated
everywhere.

ConvNet weights file (N2VCNN1), little-endian:
    magic b"N2VCNN1\\0", u32 layer count, then per layer
    u32 in_ch, u32 out_ch, u32 k, f32 weights (out*in*k*k, row-major),
    f32 bias (out); a trailing u8 noise_map_input flag ends the file.
"""

import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray
from scipy.fft import dctn, idctn

from n2vst.config import DenoiserConfig, DenoiserKind
from n2vst.errors import ImageWriteError, ParameterError, ShapeError, WeightsFormatError
from n2vst.image import ImageBuffer, check_same_shape
from n2vst.ops import (
    Padding,
    conv2d_valid,
    conv2d_valid_adjoint,
    correlate1d_valid,
    correlate1d_valid_adjoint,
    pad_edge,
    pad_edge_adjoint,
)

CONVNET_MAGIC = b"N2VCNN1\x00"
_U32 = struct.Struct("<I")
_LAYER_HEADER = struct.Struct("<III")


class Denoiser(ABC):
    """A frozen Gaussian denoiser D(img, sigma)."""

    kind: ClassVar[DenoiserKind]

    def apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer:
        _check_sigma(sigma, "denoiser_apply")
        return self._apply(np.asarray(img, dtype=np.float64), float(sigma))

    def vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer:
        _check_sigma(sigma, "denoiser_vjp")
        check_same_shape(img, cotangent, stage="denoiser_vjp")
        return self._vjp(
            np.asarray(img, dtype=np.float64),
            float(sigma),
            np.asarray(cotangent, dtype=np.float64),
        )

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind.value}

    @abstractmethod
    def _apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer: ...

    @abstractmethod
    def _vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer: ...


def _check_sigma(sigma: float, stage: str) -> None:
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ParameterError(stage=stage, message=f"sigma must be > 0, got {sigma}")


class IdentityDenoiser(Denoiser):
    kind = DenoiserKind.IDENTITY

    def _apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer:
        return img.copy()

    def _vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer:
        return cotangent.copy()


class GaussianBlurDenoiser(Denoiser):
    """Separable Gaussian convolution, radius ceil(3 sigma_blur), sigma-independent."""

    kind = DenoiserKind.BLUR

    def __init__(self, sigma_blur: float = 1.0):
        if sigma_blur <= 0:
            raise ParameterError(stage="gaussian_blur", message="sigma_blur must be > 0")
        self.sigma_blur = float(sigma_blur)
        self.radius = int(math.ceil(3.0 * self.sigma_blur))
        offsets = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        kernel = np.exp(-0.5 * (offsets / self.sigma_blur) ** 2)
        self.kernel = kernel / kernel.sum()

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "sigma_blur": self.sigma_blur}

    @property
    def _padding(self) -> Padding:
        r = self.radius
        return (r, r, r, r)

    def _apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer:
        padded = pad_edge(img, self._padding)
        rows = correlate1d_valid(padded, self.kernel, axis=0)
        return correlate1d_valid(rows, self.kernel, axis=1)

    def _vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer:
        g = correlate1d_valid_adjoint(cotangent, self.kernel, axis=1)
        g = correlate1d_valid_adjoint(g, self.kernel, axis=0)
        return pad_edge_adjoint(g, self._padding)


class DctThresholdDenoiser(Denoiser):
    """
    Sliding-window DCT shrinkage.

    Patches on a stride grid (image replicate-padded at the bottom/right so
    every pixel is covered) are transformed with the orthonormal 2-D DCT-II
    per channel; AC coefficients are soft-thresholded at
    threshold_factor * sigma, the DC coefficient is kept, and the inverse
    transforms are averaged with per-pixel coverage counts.
    """

    kind = DenoiserKind.DCT

    def __init__(self, patch: int = 8, stride: int = 4, threshold_factor: float = 3.0):
        if patch < 2 or stride < 1 or threshold_factor < 0:
            raise ParameterError(
                stage="dct_threshold",
                message="need patch >= 2, stride >= 1, threshold_factor >= 0",
                payload={"patch": patch, "stride": stride, "threshold_factor": threshold_factor},
            )
        self.patch = int(patch)
        self.stride = int(stride)
        self.threshold_factor = float(threshold_factor)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "patch": self.patch,
            "stride": self.stride,
            "threshold_factor": self.threshold_factor,
        }

    def _grid(self, length: int) -> tuple[int, int]:
        """(padded length, number of patch origins) along one axis."""
        if length <= self.patch:
            return self.patch, 1
        steps = -(-(length - self.patch) // self.stride)
        return self.patch + steps * self.stride, steps + 1

    def _layout(self, img: ImageBuffer) -> tuple[Padding, int, int]:
        height, width = img.shape[:2]
        padded_h, rows = self._grid(height)
        padded_w, cols = self._grid(width)
        return (0, padded_h - height, 0, padded_w - width), rows, cols

    def _extract(self, padded: NDArray[np.float64]) -> NDArray[np.float64]:
        windows = sliding_window_view(padded, (self.patch, self.patch), axis=(0, 1))
        return np.ascontiguousarray(windows[:: self.stride, :: self.stride])

    def _scatter(self, patches: NDArray[np.float64], shape: tuple[int, ...]) -> NDArray[np.float64]:
        """Adjoint of _extract: accumulate patches into a padded canvas, fixed order."""
        rows, cols = patches.shape[:2]
        s = self.stride
        canvas = np.zeros(shape)
        for u in range(self.patch):
            for v in range(self.patch):
                canvas[u:u + s * (rows - 1) + 1:s, v:v + s * (cols - 1) + 1:s] += patches[..., u, v]
        return canvas

    def _coverage(self, shape: tuple[int, ...], rows: int, cols: int) -> NDArray[np.float64]:
        ones = np.ones((rows, cols, 1, self.patch, self.patch))
        return self._scatter(ones, shape[:2] + (1,))

    def _pass_mask(self, coeffs: NDArray[np.float64], tau: float) -> NDArray[np.bool_]:
        """Coefficients the shrinkage passes with unit slope (DC always)."""
        if tau > 0:
            mask = np.abs(coeffs) > tau
        else:
            mask = np.ones(coeffs.shape, dtype=bool)
        mask[..., 0, 0] = True
        return mask

    def _apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer:
        pad, rows, cols = self._layout(img)
        padded = pad_edge(img, pad)
        coeffs = dctn(self._extract(padded), type=2, norm="ortho", axes=(-2, -1))

        tau = self.threshold_factor * sigma
        shrunk = np.sign(coeffs) * np.maximum(np.abs(coeffs) - tau, 0.0)
        shrunk[..., 0, 0] = coeffs[..., 0, 0]
        recon = idctn(shrunk, type=2, norm="ortho", axes=(-2, -1))

        total = self._scatter(recon, padded.shape)
        averaged = total / self._coverage(padded.shape, rows, cols)
        height, width = img.shape[:2]
        return averaged[:height, :width]

    def _vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer:
        pad, rows, cols = self._layout(img)
        padded = pad_edge(img, pad)
        coeffs = dctn(self._extract(padded), type=2, norm="ortho", axes=(-2, -1))
        mask = self._pass_mask(coeffs, self.threshold_factor * sigma)

        height, width = img.shape[:2]
        g = np.zeros(padded.shape)
        g[:height, :width] = cotangent
        g /= self._coverage(padded.shape, rows, cols)

        # Orthonormal DCT: the adjoint of idctn is dctn and vice versa.
        g_patches = dctn(self._extract(g), type=2, norm="ortho", axes=(-2, -1))
        g_patches = idctn(g_patches * mask, type=2, norm="ortho", axes=(-2, -1))
        return pad_edge_adjoint(self._scatter(g_patches, padded.shape), pad)


@dataclass(frozen=True)
class ConvLayer:
    weights: NDArray[np.float64]  # (out, in, k, k)
    bias: NDArray[np.float64]  # (out,)

    @property
    def in_channels(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def kernel_size(self) -> int:
        return int(self.weights.shape[2])


@dataclass(frozen=True)
class ConvNetWeights:
    layers: tuple[ConvLayer, ...]
    noise_map_input: bool = False

    def validate(self) -> list[str]:
        errors = []
        if not self.layers:
            errors.append("network has no layers")
        for i, layer in enumerate(self.layers):
            w = layer.weights
            if w.ndim != 4 or w.shape[2] != w.shape[3]:
                errors.append(f"layer {i}: weights must be (out, in, k, k)")
                continue
            if layer.kernel_size % 2 == 0:
                errors.append(f"layer {i}: kernel size {layer.kernel_size} is not odd")
            if layer.bias.shape != (layer.out_channels,):
                errors.append(f"layer {i}: bias must hold {layer.out_channels} values")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(layer.bias))):
                errors.append(f"layer {i}: non-finite weights")
            if i > 0 and self.layers[i - 1].out_channels != layer.in_channels:
                errors.append(
                    f"layer {i}: expects {layer.in_channels} input channels, "
                    f"layer {i - 1} produces {self.layers[i - 1].out_channels}"
                )
        return errors

    @property
    def image_channels(self) -> int:
        return self.layers[0].in_channels - int(self.noise_map_input)


class ConvNetDenoiser(Denoiser):
    """Sequential convolutions with ReLU between layers; output is the estimate."""

    kind = DenoiserKind.CONVNET

    def __init__(self, weights: ConvNetWeights):
        errors = weights.validate()
        if errors:
            raise WeightsFormatError(
                stage="convnet",
                message="; ".join(errors),
                payload={"errors": errors},
            )
        self.weights = weights

    def describe(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "layers": len(self.weights.layers),
            "noise_map_input": self.weights.noise_map_input,
        }

    def _input(self, img: ImageBuffer, sigma: float) -> NDArray[np.float64]:
        if img.shape[2] != self.weights.image_channels:
            raise ShapeError(
                stage="convnet",
                message=(
                    f"network expects {self.weights.image_channels} image channels, "
                    f"got {img.shape[2]}"
                ),
            )
        if self.weights.noise_map_input:
            return np.concatenate([img, np.full(img.shape[:2] + (1,), sigma)], axis=2)
        return img

    @staticmethod
    def _padding(layer: ConvLayer) -> Padding:
        r = (layer.kernel_size - 1) // 2
        return (r, r, r, r)

    def _forward(
        self, img: ImageBuffer, sigma: float
    ) -> tuple[NDArray[np.float64], list[NDArray[np.float64]]]:
        x = self._input(img, sigma)
        pre_activations = []
        last = len(self.weights.layers) - 1
        for i, layer in enumerate(self.weights.layers):
            pre = conv2d_valid(pad_edge(x, self._padding(layer)), layer.weights) + layer.bias
            pre_activations.append(pre)
            x = pre if i == last else np.maximum(pre, 0.0)
        return x, pre_activations

    def _apply(self, img: ImageBuffer, sigma: float) -> ImageBuffer:
        out, _ = self._forward(img, sigma)
        if out.shape != img.shape:
            raise ShapeError(
                stage="convnet",
                message=f"network output {out.shape} does not match input {img.shape}",
            )
        return out

    def _vjp(self, img: ImageBuffer, sigma: float, cotangent: ImageBuffer) -> ImageBuffer:
        _, pre_activations = self._forward(img, sigma)
        g = cotangent
        last = len(self.weights.layers) - 1
        for i in range(last, -1, -1):
            layer = self.weights.layers[i]
            if i != last:
                g = g * (pre_activations[i] > 0.0)
            g = pad_edge_adjoint(conv2d_valid_adjoint(g, layer.weights), self._padding(layer))
        return g[:, :, : img.shape[2]]


def load_convnet(path: Path | str) -> ConvNetDenoiser:
    """Read an N2VCNN1 file and wrap the validated weights as a denoiser."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise WeightsFormatError(
            stage="load_convnet",
            message=f"cannot read {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e

    if not raw.startswith(CONVNET_MAGIC):
        raise WeightsFormatError(
            stage="load_convnet",
            message=f"bad magic in {path}",
            payload={"path": str(path), "magic": raw[:8].hex()},
        )

    try:
        offset = len(CONVNET_MAGIC)
        (count,) = _U32.unpack_from(raw, offset)
        offset += _U32.size
        layers = []
        for _ in range(count):
            in_ch, out_ch, k = _LAYER_HEADER.unpack_from(raw, offset)
            offset += _LAYER_HEADER.size
            n_weights = out_ch * in_ch * k * k
            weights = np.frombuffer(raw, dtype="<f4", count=n_weights, offset=offset)
            offset += 4 * n_weights
            bias = np.frombuffer(raw, dtype="<f4", count=out_ch, offset=offset)
            offset += 4 * out_ch
            layers.append(
                ConvLayer(
                    weights=weights.astype(np.float64).reshape(out_ch, in_ch, k, k),
                    bias=bias.astype(np.float64),
                )
            )
        if len(raw) != offset + 1:
            raise ValueError(f"expected {offset + 1} bytes, file has {len(raw)}")
        noise_map_input = bool(raw[offset])
    except (struct.error, ValueError) as e:
        raise WeightsFormatError(
            stage="load_convnet",
            message=f"truncated or malformed weights file {path}: {e}",
            payload={"path": str(path)},
        ) from e

    return ConvNetDenoiser(ConvNetWeights(layers=tuple(layers), noise_map_input=noise_map_input))


def save_convnet(path: Path | str, weights: ConvNetWeights) -> None:
    parts = [CONVNET_MAGIC, _U32.pack(len(weights.layers))]
    for layer in weights.layers:
        parts.append(_LAYER_HEADER.pack(layer.in_channels, layer.out_channels, layer.kernel_size))
        parts.append(np.asarray(layer.weights, dtype="<f4").tobytes(order="C"))
        parts.append(np.asarray(layer.bias, dtype="<f4").tobytes(order="C"))
    parts.append(bytes([int(weights.noise_map_input)]))

    path = Path(path)
    try:
        path.write_bytes(b"".join(parts))
    except OSError as e:
        raise ImageWriteError(
            stage="save_convnet",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e


def build_denoiser(config: DenoiserConfig) -> Denoiser:
    """Instantiate the denoiser a configuration section describes."""
    if config.kind == DenoiserKind.IDENTITY:
        return IdentityDenoiser()
    if config.kind == DenoiserKind.BLUR:
        return GaussianBlurDenoiser(config.blur_sigma)
    if config.kind == DenoiserKind.DCT:
        return DctThresholdDenoiser(config.dct_patch, config.dct_stride, config.threshold_factor)
    return load_convnet(config.weights)
