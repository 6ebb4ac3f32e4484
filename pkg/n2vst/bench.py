"""
n2vst.bench — Desk-scale benchmark over a corpus of clean images.

For every image and noise level: synthesize Poisson noise, then score the
noisy input, the GAT pipeline with oracle parameters, and the learned
pipeline. At the configured swap level the all-classes blind-spot composite
is scored too. Results are ordered by sorted filename and lambda regardless
of how many worker threads ran them.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from n2vst.config import N2vstConfig
from n2vst.denoisers import build_denoiser
from n2vst.errors import CorpusError, ImageWriteError
from n2vst.image import SUPPORTED_SUFFIXES, load_image
from n2vst.logger import get_logger
from n2vst.metrics import psnr, ssim
from n2vst.noise import PoissonGauss, gat_pipeline, synthesize
from n2vst.trainer import blindspot_composite, infer, train
from n2vst.vst import format_number

CSV_COLUMNS = (
    "image",
    "lambda",
    "psnr_noisy",
    "ssim_noisy",
    "psnr_gat",
    "ssim_gat",
    "psnr_n2vst",
    "ssim_n2vst",
    "psnr_blindspot",
)


@dataclass(frozen=True)
class BenchCase:
    image: str
    lam: float
    psnr_noisy: float
    ssim_noisy: float
    psnr_gat: float
    ssim_gat: float
    psnr_n2vst: float
    ssim_n2vst: float
    psnr_blindspot: float | None = None

    def to_row(self) -> dict[str, Any]:
        return {
            "image": self.image,
            "lambda": self.lam,
            "psnr_noisy": self.psnr_noisy,
            "ssim_noisy": self.ssim_noisy,
            "psnr_gat": self.psnr_gat,
            "ssim_gat": self.ssim_gat,
            "psnr_n2vst": self.psnr_n2vst,
            "ssim_n2vst": self.ssim_n2vst,
            "psnr_blindspot": self.psnr_blindspot,
        }


@dataclass(frozen=True)
class BenchReport:
    cases: tuple[BenchCase, ...]

    def aggregate(self) -> dict[str, Any]:
        """Column means over all cases; the blind-spot mean covers the cases that have it."""
        row: dict[str, Any] = {"image": "mean", "lambda": "all"}
        for column in CSV_COLUMNS[2:]:
            values = [getattr(c, _attr(column)) for c in self.cases]
            present = [v for v in values if v is not None]
            row[column] = float(np.mean(present)) if present else None
        return row

    def check(self, max_gap_db: float, min_gain_db: float, swap_lambda: float) -> list[str]:
        """Acceptance thresholds; returns one message per violated criterion."""
        failures = []
        agg = self.aggregate()
        if agg["psnr_n2vst"] < agg["psnr_gat"] - max_gap_db:
            failures.append(
                f"mean n2vst PSNR {agg['psnr_n2vst']:.2f} dB is more than {max_gap_db} dB "
                f"below the GAT oracle ({agg['psnr_gat']:.2f} dB)"
            )
        if agg["psnr_n2vst"] < agg["psnr_noisy"] + min_gain_db:
            failures.append(
                f"mean n2vst PSNR {agg['psnr_n2vst']:.2f} dB gains less than {min_gain_db} dB "
                f"over the noisy input ({agg['psnr_noisy']:.2f} dB)"
            )
        swap = [c for c in self.cases if c.lam == swap_lambda and c.psnr_blindspot is not None]
        if swap:
            classic = float(np.mean([c.psnr_n2vst for c in swap]))
            blind = float(np.mean([c.psnr_blindspot for c in swap]))
            if not classic > blind:
                failures.append(
                    f"classic-denoiser inference ({classic:.2f} dB) does not beat the "
                    f"blind-spot composite ({blind:.2f} dB) at lambda {format_number(swap_lambda)}"
                )
        return failures

    def write_csv(self, path: Path | str) -> None:
        path = Path(path)
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=list(CSV_COLUMNS))
                writer.writeheader()
                for row in [c.to_row() for c in self.cases] + [self.aggregate()]:
                    writer.writerow({k: _cell(v) for k, v in row.items()})
        except OSError as e:
            raise ImageWriteError(
                stage="bench",
                message=f"cannot write {path}: {e.strerror or e}",
                payload={"path": str(path)},
            ) from e

    def to_markdown(self) -> str:
        lines = [
            "| image | lambda | noisy | GAT oracle | n2vst | blind-spot |",
            "|---|---|---|---|---|---|",
        ]
        for row in [c.to_row() for c in self.cases] + [self.aggregate()]:
            blind = row["psnr_blindspot"]
            lines.append(
                f"| {row['image']} | {_cell(row['lambda'])} "
                f"| {row['psnr_noisy']:.2f} / {row['ssim_noisy']:.3f} "
                f"| {row['psnr_gat']:.2f} / {row['ssim_gat']:.3f} "
                f"| {row['psnr_n2vst']:.2f} / {row['ssim_n2vst']:.3f} "
                f"| {'' if blind is None else f'{blind:.2f}'} |"
            )
        return "\n".join(lines) + "\n"


def _attr(column: str) -> str:
    return "lam" if column == "lambda" else column


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return format_number(value)


def discover_corpus(corpus: Path | str) -> list[Path]:
    """Supported image files directly under `corpus`, sorted by filename."""
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise CorpusError(
            stage="bench",
            message=f"corpus directory not found: {corpus}",
            payload={"path": str(corpus)},
        )
    images = sorted(
        (p for p in corpus.iterdir() if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES),
        key=lambda p: p.name,
    )
    if not images:
        raise CorpusError(
            stage="bench",
            message=f"no images in {corpus}",
            payload={"path": str(corpus)},
        )
    return images


class BenchRunner:
    """Runs every (image, lambda) case of a corpus."""

    def __init__(self, config: N2vstConfig):
        self._config = config
        self._logger = get_logger()

    def _case_rng(self, image_index: int, lam_index: int) -> np.random.Generator:
        seq = np.random.SeedSequence([self._config.train.seed, image_index, lam_index])
        return np.random.Generator(np.random.PCG64(seq))

    def run_case(self, path: Path, image_index: int, lam_index: int) -> BenchCase:
        config = self._config
        lam = config.bench.lambdas[lam_index]
        started = time.monotonic()
        clean = load_image(path)
        model = PoissonGauss.from_lambda(lam)
        noisy = synthesize(clean, model, self._case_rng(image_index, lam_index))

        denoiser = build_denoiser(config.denoiser)
        training_denoiser = build_denoiser(config.training_denoiser)
        sigma_d = config.train.sigma_d

        baseline = gat_pipeline(noisy, model.a, model.b, denoiser, sigma_d)
        result = train(noisy, training_denoiser, config.train)
        denoised = infer(noisy, result.vsts, denoiser, sigma_d)

        blind = None
        if lam == config.bench.swap_lambda:
            composite = blindspot_composite(
                noisy, result.vsts, training_denoiser, sigma_d, config.train.stride_k
            )
            blind = psnr(clean, composite)

        case = BenchCase(
            image=path.name,
            lam=lam,
            psnr_noisy=psnr(clean, noisy),
            ssim_noisy=ssim(clean, noisy),
            psnr_gat=psnr(clean, baseline),
            ssim_gat=ssim(clean, baseline),
            psnr_n2vst=psnr(clean, denoised),
            ssim_n2vst=ssim(clean, denoised),
            psnr_blindspot=blind,
        )
        self._logger.info(
            "Benchmarked case",
            stage="bench",
            image=path.name,
            lam=lam,
            psnr_noisy=case.psnr_noisy,
            psnr_gat=case.psnr_gat,
            psnr_n2vst=case.psnr_n2vst,
            seconds=round(time.monotonic() - started, 3),
        )
        return case

    def run(self, corpus: Path | str) -> BenchReport:
        images = discover_corpus(corpus)
        jobs = [
            (path, i, j)
            for i, path in enumerate(images)
            for j in range(len(self._config.bench.lambdas))
        ]
        self._logger.info(
            f"Discovered {len(images)} images",
            stage="bench",
            cases=len(jobs),
            threads=self._config.bench.threads,
        )

        if self._config.bench.threads > 1:
            cases = self._run_parallel(jobs)
        else:
            cases = [self.run_case(*job) for job in jobs]
        return BenchReport(cases=tuple(cases))

    def _run_parallel(self, jobs: list[tuple[Path, int, int]]) -> list[BenchCase]:
        results: dict[tuple[int, int], BenchCase] = {}
        with ThreadPoolExecutor(max_workers=self._config.bench.threads) as executor:
            futures = {executor.submit(self.run_case, *job): job[1:] for job in jobs}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        return [results[key] for key in sorted(results)]

