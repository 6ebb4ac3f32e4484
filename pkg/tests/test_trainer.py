"""Tests for n2vst.trainer."""

import csv
from dataclasses import replace

import numpy as np
import pytest

from n2vst.blindspot import Partition, eta
from n2vst.config import TrainConfig
from n2vst.denoisers import DctThresholdDenoiser, GaussianBlurDenoiser, IdentityDenoiser
from n2vst.errors import ParameterError, ShapeError, TrainingError
from n2vst.image import PatchBatch, make_rng
from n2vst.noise import (
    Gaussian,
    PoissonGauss,
    identity_transform,
    stabilization_profile,
    synthesize,
    vst_transform,
)
from n2vst.trainer import (
    AdamState,
    TrainResult,
    adam_step,
    blindspot_composite,
    infer,
    loss_and_grad,
    lr_at,
    train,
    write_loss_trace,
)
from n2vst.vst import Vst, VstGradient, new_identity, segment_slopes

SIGMA_D = 25 / 255


def as_batch(*patches):
    return PatchBatch(patches=np.stack(patches), source_offsets=(), augmentations=())


def perturbed_vst(seed=0, n=6):
    vst = new_identity(0.0, 1.0, n)
    rng = make_rng(seed)
    theta = vst.theta + rng.normal(0, 0.1, n)
    return vst.with_params(theta, alpha=0.05, beta=-0.02)


def small_config(**overrides):
    values = {
        "iterations": 6,
        "batch": 2,
        "patch": 16,
        "n_knots": 16,
        "log_every": 2,
        "seed": 3,
    }
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def noisy_image():
    rng = make_rng(11)
    clean = 0.2 + 0.6 * rng.random((24, 24, 1))
    return synthesize(clean, PoissonGauss.from_lambda(30), rng)


class TestLearningRate:
    def test_three_iterations(self):
        config = TrainConfig(iterations=3)
        assert [lr_at(i, config) for i in range(3)] == pytest.approx([0.01, 0.001, 0.0001])

    def test_default_schedule(self):
        config = TrainConfig()
        assert lr_at(665, config) == pytest.approx(0.01)
        assert lr_at(666, config) == pytest.approx(0.001)
        assert lr_at(1333, config) == pytest.approx(0.0001)
        assert lr_at(1999, config) == pytest.approx(0.0001)

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            lr_at(3, TrainConfig(iterations=3))
        with pytest.raises(ParameterError):
            lr_at(-1, TrainConfig(iterations=3))


class TestAdamStep:
    def test_first_step_moves_by_lr(self):
        vst = new_identity(0.0, 1.0, 4)
        grad = VstGradient(d_theta=np.ones(4), d_alpha=1.0, d_beta=1.0)

        state, updated = adam_step(AdamState.for_vst(vst), vst, grad, 0.01)

        np.testing.assert_allclose(updated.theta, vst.theta - 0.01, atol=1e-6)
        assert updated.alpha == pytest.approx(-0.01, abs=1e-6)
        assert updated.beta == pytest.approx(-0.01, abs=1e-6)
        assert state.step == 1

    def test_negative_gradient_increases(self):
        vst = new_identity(0.0, 1.0, 4)
        grad = VstGradient(d_theta=-np.ones(4), d_alpha=-1.0, d_beta=-1.0)

        _, updated = adam_step(AdamState.for_vst(vst), vst, grad, 0.01)

        assert np.all(updated.theta > vst.theta)
        assert updated.alpha == pytest.approx(0.01, abs=1e-6)

    def test_zero_gradient(self):
        vst = perturbed_vst()
        _, updated = adam_step(AdamState.for_vst(vst), vst, VstGradient.zeros(vst.n), 0.01)

        assert updated == vst

    def test_theta_clamped(self):
        vst = new_identity(0.0, 1.0, 4)
        grad = VstGradient(d_theta=-np.ones(4))

        _, updated = adam_step(AdamState.for_vst(vst), vst, grad, 100.0)

        assert np.all(updated.theta[1:] == 20.0)
        assert updated.theta[0] == pytest.approx(100.0, rel=1e-6)

    def test_shape_mismatch(self):
        vst = new_identity(0.0, 1.0, 4)
        with pytest.raises(ShapeError):
            adam_step(AdamState.zeros(3), vst, VstGradient.zeros(4), 0.01)

    def test_non_finite_gradient(self):
        vst = new_identity(0.0, 1.0, 4)
        grad = VstGradient(d_theta=np.array([0.0, np.nan, 0.0, 0.0]))
        with pytest.raises(TrainingError):
            adam_step(AdamState.for_vst(vst), vst, grad, 0.01)


class TestLossAndGrad:
    def test_identity_closed_form(self):
        z = make_rng(0).random((8, 8, 1))
        offset = (1, 2)
        mask = Partition().mask(z.shape, offset)
        vst = new_identity(float(z.min()), float(z.max()), 8)

        loss, (grad,) = loss_and_grad([vst], IdentityDenoiser(), as_batch(z), offset, SIGMA_D)

        w = eta(z)[mask[..., 0]]
        target = z[mask[..., 0]]
        assert loss == pytest.approx(np.mean((w - target) ** 2), rel=1e-9)
        assert grad.d_beta == pytest.approx(2 * np.mean(w - target), rel=1e-9)
        assert grad.d_alpha == pytest.approx(2 * np.mean((w - target) * w), rel=1e-9)

    @pytest.mark.parametrize("denoiser", [GaussianBlurDenoiser(1.0), DctThresholdDenoiser()])
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, denoiser, seed):
        rng = make_rng(seed)
        batch = as_batch(0.1 + 0.8 * rng.random((8, 8, 1)), 0.1 + 0.8 * rng.random((8, 8, 1)))
        vst = perturbed_vst(seed=100 + seed)
        offset = (int(rng.integers(0, 4)), int(rng.integers(0, 4)))

        _, (grad,) = loss_and_grad([vst], denoiser, batch, offset, SIGMA_D)

        params = np.concatenate([vst.theta, [vst.alpha, vst.beta]])
        direction = rng.normal(size=params.size)
        h = 1e-6

        def loss_at(p):
            v = vst.with_params(p[:vst.n], p[vst.n], p[vst.n + 1])
            return loss_and_grad([v], denoiser, batch, offset, SIGMA_D)[0]

        numeric = (loss_at(params + h * direction) - loss_at(params - h * direction)) / (2 * h)
        assert float(grad.as_vector() @ direction) == pytest.approx(numeric, rel=1e-3, abs=1e-9)

    def test_constant_patch(self):
        z = np.full((8, 8, 1), 0.4)
        vst = new_identity(0.0, 1.0, 8)

        loss, (grad,) = loss_and_grad([vst], GaussianBlurDenoiser(1.0), as_batch(z), (0, 0), SIGMA_D)

        assert loss == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_allclose(grad.as_vector(), 0.0, atol=1e-12)

    def test_per_channel_gradients(self):
        z = make_rng(1).random((8, 8, 2))
        vsts = [new_identity(0.0, 1.0, 6), new_identity(0.0, 1.0, 6)]

        _, grads = loss_and_grad(vsts, IdentityDenoiser(), as_batch(z), (0, 0), SIGMA_D)

        assert len(grads) == 2
        assert grads[0].d_beta != pytest.approx(grads[1].d_beta)

    def test_channel_count_mismatch(self):
        z = make_rng(1).random((8, 8, 3))
        vsts = [new_identity(0.0, 1.0, 6)] * 2
        with pytest.raises(ShapeError):
            loss_and_grad(vsts, IdentityDenoiser(), as_batch(z), (0, 0), SIGMA_D)


class TestTrain:
    def test_deterministic(self, noisy_image):
        first = train(noisy_image, GaussianBlurDenoiser(1.0), small_config())
        second = train(noisy_image, GaussianBlurDenoiser(1.0), small_config())

        assert first.vsts == second.vsts
        assert first.losses == second.losses

    def test_seed_changes_result(self, noisy_image):
        first = train(noisy_image, GaussianBlurDenoiser(1.0), small_config(seed=1))
        second = train(noisy_image, GaussianBlurDenoiser(1.0), small_config(seed=2))

        assert first.losses != second.losses

    def test_trace(self, noisy_image):
        result = train(noisy_image, GaussianBlurDenoiser(1.0), small_config())

        assert len(result.losses) == 6
        assert result.lrs == pytest.approx((0.01, 0.01, 0.001, 0.001, 0.0001, 0.0001))
        assert all(np.isfinite(result.losses))
        assert result.vst.z_min == pytest.approx(float(noisy_image.min()))

    def test_per_channel(self):
        rng = make_rng(2)
        img = np.stack([rng.random((16, 16)), 2.0 + rng.random((16, 16))], axis=-1)

        result = train(
            img,
            IdentityDenoiser(),
            small_config(iterations=2, shared_vst_across_channels=False),
        )

        assert len(result.vsts) == 2
        assert result.vsts[1].z_min == pytest.approx(float(img[..., 1].min()))

    def test_constant_image(self):
        with pytest.raises(TrainingError):
            train(np.full((16, 16, 1), 0.5), IdentityDenoiser(), small_config())

    def test_invalid_config(self, noisy_image):
        with pytest.raises(ParameterError):
            train(noisy_image, IdentityDenoiser(), small_config(iterations=0))

    def test_image_too_small(self):
        with pytest.raises(ParameterError):
            train(make_rng(0).random((4, 4, 1)), IdentityDenoiser(), small_config())

    @pytest.mark.slow
    def test_learned_transform_stabilizes(self):
        rng = make_rng(7)
        clean = np.tile(np.linspace(0.2, 1.0, 256), (256, 1))[:, :, None]
        model = PoissonGauss.from_lambda(30)
        noisy = synthesize(clean, model, rng)

        result = train(noisy, DctThresholdDenoiser(), TrainConfig())

        before = stabilization_profile(identity_transform(), clean, model, 10, 100, make_rng(1))
        after = stabilization_profile(vst_transform(result.vsts), clean, model, 10, 100, make_rng(1))
        assert before.ratio == pytest.approx(2.0, rel=0.01)
        assert after.ratio <= 1.6
        # Poisson noise calls for a concave (square-root-like) transform.
        slopes = segment_slopes(result.vst)
        assert slopes[: len(slopes) // 4].mean() > slopes[-len(slopes) // 4:].mean()

    @pytest.mark.slow
    def test_loss_decreases(self):
        rng = make_rng(8)
        clean = np.tile(np.linspace(0.2, 1.0, 128), (128, 1))[:, :, None]
        noisy = synthesize(clean, PoissonGauss.from_lambda(5), rng)

        losses = np.array(train(noisy, DctThresholdDenoiser(), TrainConfig()).losses)

        tenth = len(losses) // 10
        assert np.median(losses[-tenth:]) <= np.median(losses[:tenth])

    @pytest.mark.slow
    def test_homoscedastic_noise_keeps_transform_affine(self):
        clean = np.tile(np.linspace(0.2, 0.8, 64), (64, 1))[:, :, None]
        config = TrainConfig(iterations=300, batch=4, patch=32, n_knots=16)

        slopes = []
        for seed in range(3):
            noisy = synthesize(clean, Gaussian(0.1), make_rng(seed))
            result = train(noisy, GaussianBlurDenoiser(1.0), replace(config, seed=seed))
            slopes.append(segment_slopes(result.vst))

        mean_slopes = np.mean(slopes, axis=0)
        edge = len(mean_slopes) // 10
        central = mean_slopes[edge:len(mean_slopes) - edge]
        assert central.max() / central.min() < 1.5


class TestInference:
    def test_identity(self):
        img = make_rng(0).random((10, 10, 1))
        out = infer(img, [new_identity(0.0, 1.0, 8)], IdentityDenoiser(), SIGMA_D)

        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_beta_shifts_output(self):
        img = make_rng(0).random((10, 10, 1))
        vst = new_identity(0.0, 1.0, 8).with_params(new_identity(0.0, 1.0, 8).theta, 0.0, 0.1)

        out = infer(img, [vst], IdentityDenoiser(), SIGMA_D)

        np.testing.assert_allclose(out, img + 0.1, atol=1e-12)

    def test_per_channel(self):
        img = make_rng(1).random((10, 10, 2))
        shift = Vst(z_min=0.0, z_max=1.0, theta=new_identity(0.0, 1.0, 4).theta, beta=0.5)
        out = infer(img, [new_identity(0.0, 1.0, 4), shift], IdentityDenoiser(), SIGMA_D)

        np.testing.assert_allclose(out[..., 0], img[..., 0], atol=1e-12)
        np.testing.assert_allclose(out[..., 1], img[..., 1] + 0.5, atol=1e-12)

    def test_blindspot_composite_identity(self):
        img = make_rng(2).random((12, 12, 1))
        out = blindspot_composite(img, [new_identity(0.0, 1.0, 8)], IdentityDenoiser(), SIGMA_D)

        np.testing.assert_allclose(out, eta(img), atol=1e-12)

    def test_write_loss_trace(self, tmp_path):
        result = TrainResult(
            vsts=(new_identity(0.0, 1.0, 4),), losses=(0.5, 0.25), lrs=(0.01, 0.001)
        )
        path = tmp_path / "trace.csv"
        write_loss_trace(path, result)

        with open(path, newline="") as f:
            rows = list(csv.reader(f))

        assert rows[0] == ["iteration", "lr", "loss"]
        assert [r[0] for r in rows[1:]] == ["0", "1"]
        assert float(rows[2][2]) == pytest.approx(0.25)
