"""
n2vst.image — Image buffers, file codecs and training-patch sampling.

Images are float64 arrays of shape (height, width, channels) with channels in
{1, 3, 4}, nominal range [0, 1]. Values are never clamped inside the pipeline;
clamping happens only in save_image for integer formats.

Supported containers:
- PNG, 8/16-bit, gray/RGB/RGBA (OpenCV codec)
- PGM/PPM binary (P5/P6), 8/16-bit (OpenCV codec)
- NPF1: magic b"N2VF", u32 height, u32 width, u32 channels (little-endian),
  then float32 samples in row-major, channel-interleaved order
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from numpy.typing import NDArray

from n2vst.errors import (
    CorruptImageError,
    ImageReadError,
    ImageWriteError,
    ParameterError,
    ShapeError,
    UnsupportedFormatError,
)

ImageBuffer = NDArray[np.float64]

SUPPORTED_CHANNELS = (1, 3, 4)
MIN_TRAINING_SIDE = 8

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
NETPBM_MAGICS = (b"P5", b"P6")
NPF1_MAGIC = b"N2VF"
NPF1_HEADER = struct.Struct("<4sIII")

_PEAKS = {np.dtype(np.uint8): 255.0, np.dtype(np.uint16): 65535.0}
_INTEGER_SUFFIXES = {".png", ".pgm", ".ppm"}
_FLOAT_SUFFIXES = {".npf", ".npf1"}
SUPPORTED_SUFFIXES = frozenset(_INTEGER_SUFFIXES | _FLOAT_SUFFIXES)


@dataclass(frozen=True)
class Augmentation:
    flip_h: bool
    flip_v: bool
    rot90_count: int


@dataclass(frozen=True)
class PatchBatch:
    patches: NDArray[np.float64]  # (batch, side, side, channels)
    source_offsets: tuple[tuple[int, int], ...]
    augmentations: tuple[Augmentation, ...]

    def __len__(self) -> int:
        return int(self.patches.shape[0])


def as_image(data: NDArray, stage: str = "image") -> ImageBuffer:
    """Validate and normalize an array to the (H, W, C) float64 layout."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(
            stage=stage,
            message=f"expected an (height, width, channels) image, got shape {arr.shape}",
            payload={"shape": list(arr.shape)},
        )
    if arr.shape[2] not in SUPPORTED_CHANNELS:
        raise ShapeError(
            stage=stage,
            message=f"unsupported channel count {arr.shape[2]}",
            payload={"channels": int(arr.shape[2])},
        )
    if not np.all(np.isfinite(arr)):
        raise ParameterError(stage=stage, message="image contains NaN or infinite samples")
    return arr


def check_same_shape(a: NDArray, b: NDArray, stage: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            stage=stage,
            message=f"shape mismatch: {a.shape} vs {b.shape}",
            payload={"left": list(a.shape), "right": list(b.shape)},
        )


def load_image(path: Path | str, expected_range: float | None = None) -> ImageBuffer:
    """
    Load an image and normalize it to [0, 1].

    Integer samples are divided by the format peak (255 or 65535), or by
    expected_range when given (e.g. 4095 for 12-bit data in a 16-bit file).
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ImageReadError(
            stage="load_image",
            message=f"cannot read {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e

    if raw.startswith(NPF1_MAGIC):
        data = _decode_npf1(raw, path)
        return data / expected_range if expected_range else data

    if not (raw.startswith(PNG_SIGNATURE) or raw[:2] in NETPBM_MAGICS):
        raise UnsupportedFormatError(
            stage="load_image",
            message=f"{path} is not a PNG, binary PGM/PPM or NPF1 file",
            payload={"path": str(path), "magic": raw[:8].hex()},
        )

    decoded = cv2.imdecode(np.frombuffer(raw, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if decoded is None:
        raise CorruptImageError(
            stage="load_image",
            message=f"corrupt or truncated image data in {path}",
            payload={"path": str(path)},
        )

    peak = _PEAKS.get(decoded.dtype)
    if peak is None:
        raise UnsupportedFormatError(
            stage="load_image",
            message=f"unsupported sample type {decoded.dtype} in {path}",
            payload={"path": str(path), "dtype": str(decoded.dtype)},
        )

    data = _from_opencv_order(decoded).astype(np.float64)
    return as_image(data / (expected_range or peak), stage="load_image")


def save_image(img: ImageBuffer, path: Path | str, bit_depth: int = 8) -> None:
    """
    Write an image. Integer formats clamp to [0, 1], scale to the peak and
    round half-to-even; NPF1 (.npf) stores the float samples unclamped.
    """
    path = Path(path)
    img = as_image(img, stage="save_image")
    suffix = path.suffix.lower()

    if suffix in _FLOAT_SUFFIXES:
        payload = _encode_npf1(img)
    elif suffix in _INTEGER_SUFFIXES:
        payload = _encode_integer(img, suffix, bit_depth)
    else:
        raise UnsupportedFormatError(
            stage="save_image",
            message=f"unsupported output suffix {suffix!r}",
            payload={"path": str(path)},
        )

    try:
        path.write_bytes(payload)
    except OSError as e:
        raise ImageWriteError(
            stage="save_image",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e


def quantize(img: ImageBuffer, bit_depth: int) -> NDArray:
    """Clamp to [0, 1], scale to the integer peak, round half-to-even."""
    if bit_depth == 8:
        dtype, peak = np.uint8, 255.0
    elif bit_depth == 16:
        dtype, peak = np.uint16, 65535.0
    else:
        raise ParameterError(
            stage="save_image",
            message=f"bit_depth must be 8 or 16, got {bit_depth}",
        )
    return np.rint(np.clip(img, 0.0, 1.0) * peak).astype(dtype)


def _encode_integer(img: ImageBuffer, suffix: str, bit_depth: int) -> bytes:
    channels = img.shape[2]
    if suffix == ".pgm" and channels != 1:
        raise ShapeError(stage="save_image", message="PGM output requires a single channel")
    if suffix == ".ppm" and channels != 3:
        raise ShapeError(stage="save_image", message="PPM output requires three channels")

    ok, buffer = cv2.imencode(suffix, _to_opencv_order(quantize(img, bit_depth)))
    if not ok:
        raise ImageWriteError(stage="save_image", message=f"encoder rejected {suffix} output")
    return buffer.tobytes()


def _encode_npf1(img: ImageBuffer) -> bytes:
    height, width, channels = img.shape
    header = NPF1_HEADER.pack(NPF1_MAGIC, height, width, channels)
    return header + img.astype("<f4").tobytes(order="C")


def _decode_npf1(raw: bytes, path: Path) -> ImageBuffer:
    if len(raw) < NPF1_HEADER.size:
        raise CorruptImageError(
            stage="load_image",
            message=f"truncated NPF1 header in {path}",
            payload={"path": str(path)},
        )
    _, height, width, channels = NPF1_HEADER.unpack_from(raw)
    expected = height * width * channels * 4
    body = raw[NPF1_HEADER.size:]
    if height == 0 or width == 0 or channels not in SUPPORTED_CHANNELS or len(body) != expected:
        raise CorruptImageError(
            stage="load_image",
            message=f"inconsistent NPF1 header in {path}",
            payload={
                "path": str(path),
                "header": [height, width, channels],
                "payload_bytes": len(body),
            },
        )
    data = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(height, width, channels)
    if not np.all(np.isfinite(data)):
        raise CorruptImageError(
            stage="load_image",
            message=f"non-finite samples in {path}",
            payload={"path": str(path)},
        )
    return data


def _from_opencv_order(decoded: NDArray) -> NDArray:
    if decoded.ndim == 2:
        return decoded[:, :, np.newaxis]
    if decoded.shape[2] == 3:
        return decoded[:, :, ::-1]
    if decoded.shape[2] == 4:
        return decoded[:, :, [2, 1, 0, 3]]
    return decoded


def _to_opencv_order(arr: NDArray) -> NDArray:
    channels = arr.shape[2]
    if channels == 1:
        return np.ascontiguousarray(arr[:, :, 0])
    if channels == 3:
        return np.ascontiguousarray(arr[:, :, ::-1])
    return np.ascontiguousarray(arr[:, :, [2, 1, 0, 3]])


def augment(patch: ImageBuffer, aug: Augmentation) -> ImageBuffer:
    """Apply flips, then the 90-degree rotations."""
    out = patch
    if aug.flip_h:
        out = out[:, ::-1]
    if aug.flip_v:
        out = out[::-1, :]
    if aug.rot90_count:
        out = np.rot90(out, k=aug.rot90_count, axes=(0, 1))
    return np.ascontiguousarray(out)


def sample_training_batch(
    img: ImageBuffer,
    rng: np.random.Generator,
    patch: int,
    batch: int,
) -> PatchBatch:
    """
    Draw `batch` randomly cropped and augmented square patches.

    The side is min(patch, height, width). Crop origins are uniform over all
    valid positions; flips are independent fair coins; the rotation count is
    uniform over {0, 1, 2, 3}. Draw order per patch: row, col, flip_h, flip_v,
    rotation, so the batch is a pure function of the generator state.
    """
    height, width = img.shape[:2]
    if height < MIN_TRAINING_SIDE or width < MIN_TRAINING_SIDE:
        raise ParameterError(
            stage="sample_training_batch",
            message=f"image must be at least {MIN_TRAINING_SIDE}x{MIN_TRAINING_SIDE}",
            payload={"height": height, "width": width},
        )
    side = min(patch, height, width)

    patches = np.empty((batch, side, side, img.shape[2]), dtype=np.float64)
    offsets: list[tuple[int, int]] = []
    augmentations: list[Augmentation] = []
    for b in range(batch):
        row = int(rng.integers(0, height - side + 1))
        col = int(rng.integers(0, width - side + 1))
        aug = Augmentation(
            flip_h=bool(rng.random() < 0.5),
            flip_v=bool(rng.random() < 0.5),
            rot90_count=int(rng.integers(0, 4)),
        )
        patches[b] = augment(img[row:row + side, col:col + side], aug)
        offsets.append((row, col))
        augmentations.append(aug)

    return PatchBatch(
        patches=patches,
        source_offsets=tuple(offsets),
        augmentations=tuple(augmentations),
    )


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit's generator: numpy PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))
