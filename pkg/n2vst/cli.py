"""
n2vst.cli — Command-line interface.

Usage:
    n2vst denoise --input Z --output OUT [--denoiser KIND] [--iters N] [--seed S] ...
    n2vst synth --input CLEAN --output NOISY.npf --model poisson --lambda L
    n2vst gat --input Z --output OUT (--lambda L | --a A [--b B])
    n2vst eval --clean CLEAN --input TEST
    n2vst export-vst --input CHECKPOINT --output CURVES.csv [--a A --b B]
    n2vst bench --input CORPUS_DIR --output RESULTS.csv [--check]
    n2vst replay MANIFEST

Exit codes: 0 success, 1 check failed, 2 usage error, 3 I/O error.
Logs go to stderr as JSON lines; command results go to stdout.
"""

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from n2vst.bench import BenchRunner
from n2vst.config import (
    CONFIG_ENV,
    DenoiserKind,
    LogLevel,
    N2vstConfig,
    NoiseKind,
)
from n2vst.denoisers import build_denoiser
from n2vst.errors import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_USAGE,
    ImageWriteError,
    N2vstError,
    ParameterError,
)
from n2vst.image import load_image, make_rng, save_image
from n2vst.logger import configure_logger, get_logger
from n2vst.manifest import (
    RunManifest,
    checksums,
    load_manifest,
    manifest_path,
    now_iso,
    verify_outputs,
    write_manifest,
)
from n2vst.metrics import psnr, ssim
from n2vst.noise import InverseMode, gat_pipeline, noise_model_from_config, synthesize
from n2vst.trainer import infer, train, write_loss_trace
from n2vst.vst import EXPORT_POINTS, export_curve_csv, load_checkpoint, save_checkpoint

NOISY_SUFFIXES = (".npf", ".npf1")


def load_config(config_path: str | None) -> N2vstConfig:
    """Configuration file from --config, else $N2VST_CONFIG, else defaults."""
    path_text = config_path or os.environ.get(CONFIG_ENV)
    if not path_text:
        return N2vstConfig()

    path = Path(path_text)
    if not path.exists():
        raise ParameterError(
            stage="config",
            message=f"Configuration file not found: {path}",
            payload={"path": str(path)},
        )
    try:
        return N2vstConfig.from_yaml(path)
    except (yaml.YAMLError, ValueError, TypeError, AttributeError) as e:
        raise ParameterError(
            stage="config",
            message=f"Invalid configuration file {path}: {e}",
            payload={"path": str(path)},
        ) from e


def apply_overrides(config: N2vstConfig, args: argparse.Namespace) -> N2vstConfig:
    """CLI flags take precedence over file values."""
    train_flags = {
        "iters": "iterations",
        "batch": "batch",
        "patch": "patch",
        "stride_k": "stride_k",
        "seed": "seed",
        "sigma_d": "sigma_d",
    }
    for flag, attr in train_flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config.train, attr, value)
    if getattr(args, "per_channel", False):
        config.train.shared_vst_across_channels = False

    if getattr(args, "denoiser", None):
        config.denoiser.kind = DenoiserKind(args.denoiser)
    if getattr(args, "weights", None):
        config.denoiser.weights = args.weights
    if getattr(args, "train_denoiser", None):
        config.train_denoiser = replace(
            config.denoiser,
            kind=DenoiserKind(args.train_denoiser),
            weights=getattr(args, "train_weights", None) or config.denoiser.weights,
        )

    if getattr(args, "model", None):
        config.noise.model = NoiseKind(args.model)
    for flag, attr in (("lam", "lam"), ("a", "a"), ("b", "b"), ("sigma", "sigma")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config.noise, attr, value)

    if getattr(args, "lambdas", None):
        config.bench.lambdas = tuple(args.lambdas)
    if getattr(args, "threads", None) is not None:
        config.bench.threads = args.threads
    if getattr(args, "bit_depth", None) is not None:
        config.output.bit_depth = args.bit_depth
    if getattr(args, "log_level", None):
        config.logging.level = LogLevel(args.log_level)
    return config


def _prepare(args: argparse.Namespace, check_noise: bool = False) -> N2vstConfig | None:
    """Resolve and validate configuration; None means a usage error was logged."""
    config = apply_overrides(load_config(getattr(args, "config", None)), args)
    configure_logger(config.logging.level)
    logger = get_logger()

    errors = config.validate()
    if check_noise:
        errors.extend(config.noise.validate())
    if errors:
        for error in errors:
            logger.error(error, stage="config_validation")
        return None
    return config


def _record(
    args: argparse.Namespace,
    config: N2vstConfig,
    anchor: Path,
    inputs: list[Path | str],
    outputs: list[Path | str],
    started_at: str,
    started: float,
) -> Path:
    manifest = RunManifest(
        command=args.command,
        argv=list(args.argv),
        config=config.to_dict(),
        seed=config.train.seed,
        inputs=checksums(inputs),
        outputs=checksums(outputs),
        started_at=started_at,
        duration_s=round(time.monotonic() - started, 3),
    )
    path = manifest_path(anchor)
    write_manifest(path, manifest)
    return path


def _write_text(path: Path, text: str, stage: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ImageWriteError(
            stage=stage,
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e


def _json_number(value: float) -> Any:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def cmd_denoise(args: argparse.Namespace) -> int:
    """Train a VST on the input and denoise it."""
    config = _prepare(args)
    if config is None:
        return EXIT_USAGE
    logger = get_logger()
    started, started_at = time.monotonic(), now_iso()

    noisy = load_image(args.input)
    denoiser = build_denoiser(config.denoiser)
    training_denoiser = build_denoiser(config.training_denoiser)

    result = train(noisy, training_denoiser, config.train)
    denoised = infer(noisy, result.vsts, denoiser, config.train.sigma_d)

    output = Path(args.output)
    checkpoint = Path(args.checkpoint) if args.checkpoint else output.with_name(
        output.name + ".vst.json"
    )
    trace = Path(args.trace) if args.trace else output.with_name(output.name + ".trace.csv")

    save_image(denoised, output, config.output.bit_depth)
    save_checkpoint(checkpoint, result.vsts)
    write_loss_trace(trace, result)
    outputs: list[Path | str] = [output, checkpoint, trace]
    if args.export_vst:
        export_curve_csv(args.export_vst, result.vsts)
        outputs.append(args.export_vst)

    manifest = _record(args, config, output, [args.input], outputs, started_at, started)
    logger.info(
        "Denoising complete",
        stage="denoise",
        final_loss=result.losses[-1],
        manifest=str(manifest),
    )
    print(json.dumps({
        "output": str(output),
        "checkpoint": str(checkpoint),
        "trace": str(trace),
        "manifest": str(manifest),
    }))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    """Add synthetic noise to a clean image."""
    config = _prepare(args, check_noise=True)
    if config is None:
        return EXIT_USAGE
    output = Path(args.output)
    if output.suffix.lower() not in NOISY_SUFFIXES:
        get_logger().error(
            "noisy images are stored as NPF1; use a .npf output",
            stage="config_validation",
            output=str(output),
        )
        return EXIT_USAGE
    started, started_at = time.monotonic(), now_iso()

    clean = load_image(args.input)
    model = noise_model_from_config(config.noise)
    noisy = synthesize(clean, model, make_rng(config.train.seed))
    save_image(noisy, output)

    manifest = _record(args, config, output, [args.input], [output], started_at, started)
    print(json.dumps({
        "output": str(output),
        "residual_std": float(np.std(noisy - clean)),
        "manifest": str(manifest),
    }))
    return EXIT_OK


def cmd_gat(args: argparse.Namespace) -> int:
    """Denoise with the GAT pipeline and oracle noise parameters."""
    config = _prepare(args)
    if config is None:
        return EXIT_USAGE
    noise = config.noise
    if noise.lam is None and noise.a is None:
        get_logger().error("--lambda or --a is required", stage="config_validation")
        return EXIT_USAGE
    errors = replace(noise, model=NoiseKind.POISSON_GAUSS).validate()
    if errors:
        for error in errors:
            get_logger().error(error, stage="config_validation")
        return EXIT_USAGE
    started, started_at = time.monotonic(), now_iso()

    model = noise_model_from_config(replace(noise, model=NoiseKind.POISSON_GAUSS))
    noisy = load_image(args.input)
    denoiser = build_denoiser(config.denoiser)
    denoised = gat_pipeline(
        noisy, model.a, model.b, denoiser, config.train.sigma_d, InverseMode(args.inverse)
    )
    output = Path(args.output)
    save_image(denoised, output, config.output.bit_depth)

    manifest = _record(args, config, output, [args.input], [output], started_at, started)
    print(json.dumps({"output": str(output), "manifest": str(manifest)}))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Compare a test image against its clean reference."""
    config = _prepare(args)
    if config is None:
        return EXIT_USAGE
    clean = load_image(args.clean)
    test = load_image(args.input)
    report = {
        "psnr": _json_number(psnr(clean, test)),
        "ssim": ssim(clean, test),
    }
    text = json.dumps(report, sort_keys=True)
    if args.output:
        _write_text(Path(args.output), text + "\n", stage="eval")
    print(text)
    return EXIT_OK


def cmd_export_vst(args: argparse.Namespace) -> int:
    """Sample a checkpoint's curves to CSV."""
    config = _prepare(args)
    if config is None:
        return EXIT_USAGE
    if args.b is not None and args.a is None:
        get_logger().error("--b requires --a", stage="config_validation")
        return EXIT_USAGE
    started, started_at = time.monotonic(), now_iso()

    vsts = load_checkpoint(args.input)
    gat_params = (args.a, args.b or 0.0) if args.a is not None else None
    output = Path(args.output)
    export_curve_csv(output, vsts, args.points, gat_params)

    manifest = _record(args, config, output, [args.input], [output], started_at, started)
    print(json.dumps({"output": str(output), "manifest": str(manifest)}))
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    """Run the benchmark over a corpus of clean images."""
    config = _prepare(args)
    if config is None:
        return EXIT_USAGE
    logger = get_logger()
    started, started_at = time.monotonic(), now_iso()

    report = BenchRunner(config).run(args.input)
    output = Path(args.output)
    table = output.with_suffix(".md")
    report.write_csv(output)
    markdown = report.to_markdown()
    _write_text(table, markdown, stage="bench")
    _record(args, config, output, [], [output, table], started_at, started)
    print(markdown, end="")

    if args.check:
        failures = report.check(
            config.bench.max_gap_db, config.bench.min_gain_db, config.bench.swap_lambda
        )
        for failure in failures:
            logger.error(failure, stage="bench_check")
        if failures:
            return EXIT_CHECK_FAILED
        logger.info("All checks passed", stage="bench_check")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    """Re-run a manifest's command and compare output digests."""
    configure_logger(LogLevel(args.log_level) if args.log_level else LogLevel.INFO)
    logger = get_logger()
    manifest = load_manifest(args.manifest)
    if not manifest.argv or manifest.argv[0] == "replay":
        logger.error("manifest does not record a replayable command", stage="replay")
        return EXIT_USAGE

    code = main(manifest.argv)
    if code != EXIT_OK:
        return code
    mismatches = verify_outputs(manifest)
    for mismatch in mismatches:
        logger.error(mismatch, stage="replay")
    print(json.dumps({"reproduced": not mismatches, "mismatches": mismatches}))
    return EXIT_CHECK_FAILED if mismatches else EXIT_OK


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-c", "--config", help="Path to configuration file")
    parser.add_argument(
        "--log-level",
        choices=[level.value for level in LogLevel],
        help="Override logging.level",
    )


def _add_denoiser_flags(parser: argparse.ArgumentParser) -> None:
    kinds = [kind.value for kind in DenoiserKind]
    parser.add_argument("--denoiser", choices=kinds, help="Inference denoiser")
    parser.add_argument("--weights", help="N2VCNN1 weights for the convnet denoiser")
    parser.add_argument("--sigma-d", type=float, help="Noise level passed to the denoiser")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    kinds = [kind.value for kind in DenoiserKind]
    parser.add_argument(
        "--train-denoiser",
        choices=kinds,
        help="Denoiser wrapped by the blind-spot construction (default: --denoiser)",
    )
    parser.add_argument("--train-weights", help="Weights for a convnet training denoiser")
    parser.add_argument("--iters", type=int, help="Training iterations")
    parser.add_argument("--batch", type=int, help="Patches per iteration")
    parser.add_argument("--patch", type=int, help="Patch side")
    parser.add_argument("--stride-k", type=int, help="Blind-spot partition stride")
    parser.add_argument(
        "--per-channel",
        action="store_true",
        help="Learn one transform per color channel",
    )


def _add_noise_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="lam", type=float, help="Poisson level (a = 1/lambda)")
    parser.add_argument("--a", type=float, help="Poisson gain a")
    parser.add_argument("--b", type=float, help="Gaussian variance b")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="n2vst",
        description="Zero-shot denoising with a learned variance-stabilizing transform",
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    denoise = subparsers.add_parser("denoise", help="Learn a VST on the input and denoise it")
    _add_common(denoise)
    denoise.add_argument("--input", required=True, help="Noisy image")
    denoise.add_argument("--output", required=True, help="Denoised image")
    _add_denoiser_flags(denoise)
    _add_train_flags(denoise)
    denoise.add_argument("--seed", type=int, help="Training seed")
    denoise.add_argument("--trace", help="Loss trace CSV (default: OUTPUT.trace.csv)")
    denoise.add_argument("--checkpoint", help="VST checkpoint (default: OUTPUT.vst.json)")
    denoise.add_argument("--export-vst", help="Also write the learned curves as CSV")
    denoise.add_argument("--bit-depth", type=int, choices=[8, 16], help="Integer output depth")

    synth = subparsers.add_parser("synth", help="Add synthetic noise to a clean image")
    _add_common(synth)
    synth.add_argument("--input", required=True, help="Clean image")
    synth.add_argument("--output", required=True, help="Noisy image (.npf)")
    synth.add_argument("--model", choices=[kind.value for kind in NoiseKind], help="Noise model")
    _add_noise_flags(synth)
    synth.add_argument("--sigma", type=float, help="Gaussian noise std")
    synth.add_argument("--seed", type=int, help="Noise seed")

    gat = subparsers.add_parser("gat", help="Denoise with the GAT and oracle parameters")
    _add_common(gat)
    gat.add_argument("--input", required=True, help="Noisy image")
    gat.add_argument("--output", required=True, help="Denoised image")
    _add_denoiser_flags(gat)
    _add_noise_flags(gat)
    gat.add_argument(
        "--inverse",
        choices=[mode.value for mode in InverseMode],
        default=InverseMode.UNBIASED.value,
        help="GAT inverse",
    )
    gat.add_argument("--bit-depth", type=int, choices=[8, 16], help="Integer output depth")

    evaluate = subparsers.add_parser("eval", help="PSNR and SSIM against a clean reference")
    _add_common(evaluate)
    evaluate.add_argument("--clean", required=True, help="Clean reference image")
    evaluate.add_argument("--input", required=True, help="Image to score")
    evaluate.add_argument("--output", help="Also write the JSON report here")

    export = subparsers.add_parser("export-vst", help="Export checkpoint curves as CSV")
    _add_common(export)
    export.add_argument("--input", required=True, help="VST checkpoint")
    export.add_argument("--output", required=True, help="CSV path")
    export.add_argument("--points", type=int, default=EXPORT_POINTS, help="Grid points")
    _add_noise_flags(export)

    bench = subparsers.add_parser("bench", help="Benchmark over a corpus of clean images")
    _add_common(bench)
    bench.add_argument("--input", required=True, help="Corpus directory")
    bench.add_argument("--output", required=True, help="Results CSV")
    _add_denoiser_flags(bench)
    _add_train_flags(bench)
    bench.add_argument("--seed", type=int, help="Base seed")
    bench.add_argument("--lambdas", type=_float_list, help="Comma-separated Poisson levels")
    bench.add_argument("--threads", type=int, help="Worker threads (default $N2VST_THREADS)")
    bench.add_argument("--check", action="store_true", help="Enforce acceptance thresholds")

    replay = subparsers.add_parser("replay", help="Re-run a manifest and compare outputs")
    replay.add_argument("manifest", help="Path to a .manifest.json file")
    replay.add_argument("--log-level", choices=[level.value for level in LogLevel])

    return parser


COMMANDS = {
    "denoise": cmd_denoise,
    "synth": cmd_synth,
    "gat": cmd_gat,
    "eval": cmd_eval,
    "export-vst": cmd_export_vst,
    "bench": cmd_bench,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv

    handler = COMMANDS.get(args.command)
    if handler is None:
        parser.print_help()
        return EXIT_USAGE

    try:
        return handler(args)
    except N2vstError as e:
        get_logger().error(e.message, stage=e.stage, error=e.to_dict())
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
