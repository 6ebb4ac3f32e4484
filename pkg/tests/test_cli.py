"""Tests for n2vst.cli."""

import json

import numpy as np
import pytest

from n2vst.cli import apply_overrides, build_parser, load_config, main
from n2vst.config import CONFIG_ENV, DenoiserKind
from n2vst.errors import ParameterError
from n2vst.image import load_image, make_rng, save_image
from n2vst.noise import PoissonGauss, synthesize
from n2vst.vst import new_identity, save_checkpoint

TRAIN_FLAGS = ["--iters", "3", "--patch", "16", "--batch", "1", "--denoiser", "blur"]


def last_json(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


@pytest.fixture(autouse=True)
def no_config_env(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)


@pytest.fixture
def clean_path(tmp_path):
    path = tmp_path / "clean.npf"
    save_image(np.tile(np.linspace(0.2, 0.8, 24), (24, 1))[:, :, None], path)
    return path


@pytest.fixture
def noisy_path(tmp_path, clean_path):
    rng = make_rng(1)
    path = tmp_path / "noisy.npf"
    save_image(synthesize(load_image(clean_path), PoissonGauss.from_lambda(30), rng), path)
    return path


class TestConfigResolution:
    def test_defaults_without_file(self):
        assert load_config(None).train.iterations == 2000

    def test_env_file(self, tmp_path, monkeypatch):
        path = tmp_path / "n2vst.yaml"
        path.write_text("train:\n  iterations: 12\n")
        monkeypatch.setenv(CONFIG_ENV, str(path))

        assert load_config(None).train.iterations == 12

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParameterError):
            load_config(str(tmp_path / "missing.yaml"))

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "n2vst.yaml"
        path.write_text("train:\n  iterations: 12\n  seed: 4\n")
        args = build_parser().parse_args(
            ["denoise", "--input", "z", "--output", "o", "--iters", "7", "--train-denoiser", "blur"]
        )

        config = apply_overrides(load_config(str(path)), args)

        assert config.train.iterations == 7
        assert config.train.seed == 4
        assert config.training_denoiser.kind == DenoiserKind.BLUR
        assert config.denoiser.kind == DenoiserKind.DCT


class TestUsageErrors:
    def test_no_command(self):
        assert main([]) == 2

    def test_zero_iterations(self, noisy_path, tmp_path):
        code = main(
            ["denoise", "--input", str(noisy_path), "--output", str(tmp_path / "o.npf"), "--iters", "0"]
        )
        assert code == 2

    def test_gaussian_without_sigma(self, clean_path, tmp_path):
        code = main([
            "synth", "--input", str(clean_path), "--output", str(tmp_path / "z.npf"),
            "--model", "gauss", "--sigma", "0",
        ])
        assert code == 2

    def test_synth_requires_float_container(self, clean_path, tmp_path):
        code = main([
            "synth", "--input", str(clean_path), "--output", str(tmp_path / "z.png"),
            "--lambda", "30",
        ])
        assert code == 2

    def test_gat_without_level(self, noisy_path, tmp_path):
        assert main(["gat", "--input", str(noisy_path), "--output", str(tmp_path / "o.npf")]) == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["denoise", "--bogus"])
        assert exc.value.code == 2

    def test_missing_input(self, tmp_path):
        code = main([
            "denoise", "--input", str(tmp_path / "none.png"), "--output", str(tmp_path / "o.npf"),
        ])
        assert code == 3


class TestSynthAndGat:
    def test_synth(self, clean_path, tmp_path, capsys):
        output = tmp_path / "z.npf"
        code = main([
            "synth", "--input", str(clean_path), "--output", str(output),
            "--lambda", "30", "--seed", "2",
        ])

        assert code == 0
        assert output.exists()
        assert (tmp_path / "z.npf.manifest.json").exists()
        assert last_json(capsys)["residual_std"] > 0

    def test_gat(self, noisy_path, tmp_path, capsys):
        output = tmp_path / "gat.npf"
        code = main([
            "gat", "--input", str(noisy_path), "--output", str(output), "--lambda", "30",
        ])

        assert code == 0
        assert load_image(output).shape == (24, 24, 1)

    def test_residual_scales_with_lambda(self, tmp_path, capsys):
        clean = tmp_path / "flat.npf"
        save_image(np.full((64, 64, 1), 0.5), clean)
        residuals = {}
        for lam in ("5", "50"):
            output = tmp_path / f"z{lam}.npf"
            argv = ["synth", "--input", str(clean), "--output", str(output), "--lambda", lam]
            assert main(argv + ["--seed", "3"]) == 0
            residuals[lam] = last_json(capsys)["residual_std"]

        assert residuals["5"] / residuals["50"] == pytest.approx(np.sqrt(10.0), rel=0.08)

    def test_gat_wrong_lambda_is_worse(self, noisy_path, clean_path, tmp_path, capsys):
        scores = {}
        for lam in ("30", "3"):
            output = tmp_path / f"gat{lam}.npf"
            argv = ["gat", "--input", str(noisy_path), "--output", str(output), "--lambda", lam]
            assert main(argv) == 0
            assert main(["eval", "--clean", str(clean_path), "--input", str(output)]) == 0
            scores[lam] = last_json(capsys)["psnr"]

        assert scores["30"] > scores["3"]


class TestEval:
    def test_identical(self, clean_path, capsys):
        assert main(["eval", "--clean", str(clean_path), "--input", str(clean_path)]) == 0

        report = last_json(capsys)
        assert report["psnr"] == "inf"
        assert report["ssim"] == pytest.approx(1.0)

    def test_constant_offset(self, tmp_path, capsys):
        clean, test = tmp_path / "c.npf", tmp_path / "t.npf"
        save_image(np.full((16, 16, 1), 0.5), clean)
        save_image(np.full((16, 16, 1), 0.6), test)

        assert main(["eval", "--clean", str(clean), "--input", str(test)]) == 0
        assert last_json(capsys)["psnr"] == pytest.approx(20.0, abs=1e-4)

    def test_unwritable_report(self, clean_path, tmp_path):
        output = tmp_path / "missing_dir" / "r.json"
        code = main([
            "eval", "--clean", str(clean_path), "--input", str(clean_path),
            "--output", str(output),
        ])

        assert code == 3
        assert not output.exists()


class TestExportVst:
    def test_identity(self, tmp_path):
        checkpoint = tmp_path / "vst.json"
        save_checkpoint(checkpoint, [new_identity(0.0, 1.0, 8)])
        output = tmp_path / "curves.csv"

        code = main([
            "export-vst", "--input", str(checkpoint), "--output", str(output),
            "--points", "5", "--a", "0.02",
        ])

        lines = output.read_text().splitlines()
        assert code == 0
        assert lines[0] == "z,f,f_inv,gat,gat_inverse"
        assert len(lines) == 6

    def test_b_without_a(self, tmp_path):
        checkpoint = tmp_path / "vst.json"
        save_checkpoint(checkpoint, [new_identity(0.0, 1.0, 8)])

        code = main([
            "export-vst", "--input", str(checkpoint), "--output", str(tmp_path / "c.csv"),
            "--b", "0.1",
        ])
        assert code == 2


class TestDenoise:
    def test_writes_artifacts(self, noisy_path, tmp_path, capsys):
        output = tmp_path / "out.npf"
        code = main(["denoise", "--input", str(noisy_path), "--output", str(output), *TRAIN_FLAGS])

        assert code == 0
        result = last_json(capsys)
        assert result["checkpoint"] == str(tmp_path / "out.npf.vst.json")
        for name in ("out.npf", "out.npf.vst.json", "out.npf.trace.csv", "out.npf.manifest.json"):
            assert (tmp_path / name).exists()
        assert len((tmp_path / "out.npf.trace.csv").read_text().splitlines()) == 4

    def test_deterministic(self, noisy_path, tmp_path):
        for name in ("first.npf", "second.npf"):
            argv = ["denoise", "--input", str(noisy_path), "--output", str(tmp_path / name)]
            assert main(argv + TRAIN_FLAGS + ["--seed", "9"]) == 0

        assert (tmp_path / "first.npf").read_bytes() == (tmp_path / "second.npf").read_bytes()

    def test_replay(self, noisy_path, tmp_path, capsys):
        output = tmp_path / "out.npf"
        assert main(["denoise", "--input", str(noisy_path), "--output", str(output), *TRAIN_FLAGS]) == 0

        assert main(["replay", str(tmp_path / "out.npf.manifest.json")]) == 0
        assert last_json(capsys) == {"reproduced": True, "mismatches": []}

    def test_replay_missing_manifest(self, tmp_path):
        assert main(["replay", str(tmp_path / "none.manifest.json")]) == 3


class TestBench:
    def test_empty_corpus(self, tmp_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()

        code = main(["bench", "--input", str(corpus), "--output", str(tmp_path / "r.csv")])
        assert code == 3

    def test_small_run(self, tmp_path, clean_path, capsys):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        clean_path.rename(corpus / clean_path.name)
        output = tmp_path / "results.csv"

        code = main([
            "bench", "--input", str(corpus), "--output", str(output),
            "--lambdas", "50", *TRAIN_FLAGS,
        ])

        assert code == 0
        assert (tmp_path / "results.md").exists()
        assert len(output.read_text().splitlines()) == 3
        assert "| mean | all |" in capsys.readouterr().out

    def test_unwritable_table(self, tmp_path, clean_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        clean_path.rename(corpus / clean_path.name)
        (tmp_path / "results.md").mkdir()

        code = main([
            "bench", "--input", str(corpus), "--output", str(tmp_path / "results.csv"),
            "--lambdas", "50", *TRAIN_FLAGS,
        ])
        assert code == 3

    def test_check_failure(self, tmp_path, clean_path):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        clean_path.rename(corpus / clean_path.name)
        config = tmp_path / "n2vst.yaml"
        config.write_text("bench:\n  min_gain_db: 100.0\n")

        code = main([
            "bench", "--config", str(config), "--input", str(corpus),
            "--output", str(tmp_path / "results.csv"), "--lambdas", "50", "--check",
            *TRAIN_FLAGS,
        ])
        assert code == 1
