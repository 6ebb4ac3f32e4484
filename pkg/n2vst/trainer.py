"""
n2vst.trainer — Self-supervised VST training and inference.

Each iteration draws a patch batch and one partition class J, evaluates
f_inv(D_J(f(z))) against the noisy patch itself on the pixels of J, and
takes an Adam step on (theta, alpha, beta). The denoiser is frozen. At
inference the blind-spot wrapper is dropped and the classic denoiser runs on
the whole stabilized image.
"""

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from n2vst.blindspot import ClassOffset, Partition, apply_blindspot, vjp_blindspot
from n2vst.config import TrainConfig
from n2vst.denoisers import Denoiser
from n2vst.errors import ImageWriteError, ParameterError, ShapeError, TrainingError
from n2vst.image import ImageBuffer, PatchBatch, as_image, make_rng, sample_training_batch
from n2vst.logger import get_logger
from n2vst.vst import (
    Vst,
    VstGradient,
    clamp_theta,
    format_number,
    forward_array,
    forward_image,
    forward_vjp,
    inverse_array,
    inverse_image,
    inverse_vjp,
    new_identity,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: NDArray[np.float64]
    v: NDArray[np.float64]
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), step=0)

    @classmethod
    def for_vst(cls, vst: Vst) -> "AdamState":
        return cls.zeros(vst.parameter_count)


@dataclass(frozen=True)
class TrainResult:
    vsts: tuple[Vst, ...]
    losses: tuple[float, ...] = field(repr=False)
    lrs: tuple[float, ...] = field(repr=False)

    @property
    def vst(self) -> Vst:
        """The shared transform (first channel's in per-channel mode)."""
        return self.vsts[0]


def lr_at(iteration: int, config: TrainConfig) -> float:
    if not 0 <= iteration < config.iterations:
        raise ParameterError(
            stage="lr_at",
            message=f"iteration {iteration} outside [0, {config.iterations})",
        )
    first, second = config.lr_drops
    if iteration < first:
        return config.lr0
    if iteration < second:
        return config.lr0 / config.lr_drop_factor
    return config.lr0 / config.lr_drop_factor**2


def adam_step(
    state: AdamState,
    vst: Vst,
    grad: VstGradient,
    lr: float,
) -> tuple[AdamState, Vst]:
    """Bias-corrected Adam update of (theta, alpha, beta); theta is clamped afterwards."""
    g = grad.as_vector()
    if g.shape != state.m.shape:
        raise ShapeError(
            stage="adam_step",
            message=f"gradient has {g.size} entries, optimizer tracks {state.m.size}",
        )
    if not np.all(np.isfinite(g)):
        raise TrainingError(
            stage="adam_step",
            message="non-finite gradient",
            payload={"step": state.step},
        )

    step = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * g * g
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)

    params = np.concatenate([vst.theta, [vst.alpha, vst.beta]])
    params = params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    n = vst.n
    updated = vst.with_params(clamp_theta(params[:n]), params[n], params[n + 1])
    return AdamState(m=m, v=v, step=step), updated


def _channel_groups(vsts: Sequence[Vst], channels: int) -> list[tuple[Vst, slice]]:
    if len(vsts) == 1:
        return [(vsts[0], slice(None))]
    if len(vsts) != channels:
        raise ShapeError(
            stage="loss_and_grad",
            message=f"{len(vsts)} per-channel transforms for {channels} channels",
        )
    return [(v, slice(c, c + 1)) for c, v in enumerate(vsts)]


def loss_and_grad(
    vsts: Sequence[Vst],
    denoiser: Denoiser,
    batch: PatchBatch,
    class_offset: ClassOffset,
    sigma_d: float,
    partition: Partition | None = None,
) -> tuple[float, tuple[VstGradient, ...]]:
    """
    Masked self-supervised loss and its exact gradient.

    loss = mean over the batch, the pixels of class J and the channels of
    (f_inv(D_J(f(z))) - z)^2. The gradient collects the explicit dependence
    of f_inv at its input and the path through D_J back into f; z itself is
    the constant target.
    """
    if partition is None:
        partition = Partition()
    patches = batch.patches
    channels = patches.shape[-1]
    groups = _channel_groups(vsts, channels)
    mask = partition.mask(patches.shape[1:], class_offset)
    count = len(batch) * int(mask.sum()) * channels
    if count == 0:
        raise ParameterError(
            stage="loss_and_grad",
            message=f"class {class_offset} has no pixels in a {patches.shape[1]}-pixel patch",
        )

    total = 0.0
    grads = [VstGradient.zeros(v.n) for v, _ in groups]
    for z in patches:
        u = np.empty_like(z)
        for v, sl in groups:
            u[..., sl] = forward_array(v, z[..., sl])
        denoised = apply_blindspot(denoiser, u, sigma_d, class_offset, partition).image

        out = np.empty_like(z)
        for v, sl in groups:
            out[..., sl] = inverse_array(v, denoised[..., sl])
        residual = np.where(mask, out - z, 0.0)
        total += float(np.sum(residual * residual))

        g_out = 2.0 * residual / count
        g_denoised = np.empty_like(z)
        for i, (v, sl) in enumerate(groups):
            g_denoised[..., sl], inv_grad = inverse_vjp(v, denoised[..., sl], g_out[..., sl])
            grads[i] = grads[i] + inv_grad

        g_u = vjp_blindspot(denoiser, u, sigma_d, g_denoised, class_offset, partition)
        for i, (v, sl) in enumerate(groups):
            _, d_theta = forward_vjp(v, z[..., sl], g_u[..., sl])
            grads[i] = grads[i] + VstGradient(d_theta=d_theta)

    return total / count, tuple(grads)


def _initial_vsts(img: ImageBuffer, config: TrainConfig) -> tuple[Vst, ...]:
    if config.shared_vst_across_channels or img.shape[2] == 1:
        ranges = [(float(img.min()), float(img.max()))]
    else:
        ranges = [(float(img[..., c].min()), float(img[..., c].max())) for c in range(img.shape[2])]

    for c, (lo, hi) in enumerate(ranges):
        if not lo < hi:
            raise TrainingError(
                stage="train",
                message="cannot learn a transform from a constant image",
                payload={"channel": c, "value": lo},
            )
    return tuple(new_identity(lo, hi, config.n_knots) for lo, hi in ranges)


def train(img: ImageBuffer, denoiser: Denoiser, config: TrainConfig) -> TrainResult:
    """
    Fit the transform to a single noisy image. `denoiser` is the one wrapped by
    the blind-spot construction; the result depends only on (img, denoiser, config).
    """
    errors = config.validate()
    if errors:
        raise ParameterError(stage="train", message="; ".join(errors))
    img = as_image(img, stage="train")
    vsts = _initial_vsts(img, config)
    states = [AdamState.for_vst(v) for v in vsts]
    partition = Partition(config.stride_k)
    rng = make_rng(config.seed)
    logger = get_logger()

    logger.info(
        "Training started",
        stage="train",
        iterations=config.iterations,
        parameters=sum(v.parameter_count for v in vsts),
        denoiser=denoiser.describe(),
    )
    losses: list[float] = []
    lrs: list[float] = []
    for iteration in range(config.iterations):
        batch = sample_training_batch(img, rng, config.patch, config.batch)
        offset = partition.classes[int(rng.integers(0, len(partition)))]
        loss, grads = loss_and_grad(vsts, denoiser, batch, offset, config.sigma_d, partition)
        if not math.isfinite(loss):
            raise TrainingError(
                stage="train",
                message=f"non-finite loss at iteration {iteration}",
                payload={"iteration": iteration},
            )

        lr = lr_at(iteration, config)
        try:
            stepped = [adam_step(s, v, g, lr) for s, v, g in zip(states, vsts, grads)]
        except TrainingError as e:
            raise TrainingError(
                stage="train",
                message=f"{e.message} at iteration {iteration}",
                payload={"iteration": iteration},
            ) from e
        states = [s for s, _ in stepped]
        vsts = tuple(v for _, v in stepped)
        losses.append(loss)
        lrs.append(lr)

        if iteration % config.log_every == 0 or iteration == config.iterations - 1:
            logger.iteration(iteration, loss, lr)

    return TrainResult(vsts=vsts, losses=tuple(losses), lrs=tuple(lrs))


def infer(img: ImageBuffer, vsts: Sequence[Vst], denoiser: Denoiser, sigma_d: float) -> ImageBuffer:
    """f_inv(D(f(z))) with the classic denoiser; no clamping."""
    img = as_image(img, stage="infer")
    return inverse_image(vsts, denoiser.apply(forward_image(vsts, img), sigma_d))


def blindspot_composite(
    img: ImageBuffer,
    vsts: Sequence[Vst],
    denoiser: Denoiser,
    sigma_d: float,
    stride: int = 4,
) -> ImageBuffer:
    """Inference through the all-classes blind-spot denoiser instead of the classic one."""
    img = as_image(img, stage="blindspot_composite")
    stabilized = forward_image(vsts, img)
    denoised = apply_blindspot(denoiser, stabilized, sigma_d, None, Partition(stride)).image
    return inverse_image(vsts, denoised)


def write_loss_trace(path: Path | str, result: TrainResult) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "lr", "loss"])
            for i, (lr, loss) in enumerate(zip(result.lrs, result.losses)):
                writer.writerow([i, format_number(lr), format_number(loss)])
    except OSError as e:
        raise ImageWriteError(
            stage="write_loss_trace",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e
