"""
n2vst.config — Configuration loading and validation.

Configuration comes from an optional YAML file, overridden by CLI flags.
Every section has documented defaults; validate() reports all problems at once.
"""

import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

DEFAULT_SIGMA_D = 25.0 / 255.0
THREADS_ENV = "N2VST_THREADS"
CONFIG_ENV = "N2VST_CONFIG"


class DenoiserKind(str, Enum):
    IDENTITY = "identity"
    BLUR = "blur"
    DCT = "dct"
    CONVNET = "convnet"


class NoiseKind(str, Enum):
    POISSON = "poisson"
    POISSON_GAUSS = "poisson_gauss"
    GAUSS = "gauss"


class LogLevel(str, Enum):
    DEBUG = "debug"
    INFO = "info"
    WARN = "warn"
    ERROR = "error"


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch: int = 4
    patch: int = 64
    lr0: float = 0.01
    lr_drop_factor: float = 10.0
    sigma_d: float = DEFAULT_SIGMA_D
    stride_k: int = 4
    seed: int = 0
    shared_vst_across_channels: bool = True
    n_knots: int = 128
    log_every: int = 100

    @property
    def lr_drops(self) -> tuple[int, int]:
        """Iterations at which the learning rate is divided by lr_drop_factor."""
        return self.iterations // 3, 2 * self.iterations // 3

    def validate(self) -> list[str]:
        errors = []
        if self.iterations < 1:
            errors.append("train.iterations must be >= 1")
        if self.batch < 1:
            errors.append("train.batch must be >= 1")
        if self.patch < 8:
            errors.append("train.patch must be >= 8")
        if self.lr0 <= 0:
            errors.append("train.lr0 must be > 0")
        if self.lr_drop_factor <= 0:
            errors.append("train.lr_drop_factor must be > 0")
        if self.sigma_d <= 0:
            errors.append("train.sigma_d must be > 0")
        if self.stride_k < 2:
            errors.append("train.stride_k must be >= 2")
        if not 0 <= self.seed < 2**64:
            errors.append("train.seed must be a 64-bit unsigned integer")
        if self.n_knots < 2:
            errors.append("train.n_knots must be >= 2")
        if self.log_every < 1:
            errors.append("train.log_every must be >= 1")
        return errors


@dataclass
class DenoiserConfig:
    kind: DenoiserKind = DenoiserKind.DCT
    blur_sigma: float = 1.0
    dct_patch: int = 8
    dct_stride: int = 4
    threshold_factor: float = 3.0
    weights: str = ""

    def validate(self, section: str = "denoiser") -> list[str]:
        errors = []
        if self.blur_sigma <= 0:
            errors.append(f"{section}.blur_sigma must be > 0")
        if self.dct_patch < 2:
            errors.append(f"{section}.dct_patch must be >= 2")
        if self.dct_stride < 1:
            errors.append(f"{section}.dct_stride must be >= 1")
        if self.threshold_factor < 0:
            errors.append(f"{section}.threshold_factor must be >= 0")
        if self.kind == DenoiserKind.CONVNET and not self.weights:
            errors.append(f"{section}.weights is required for the convnet denoiser")
        return errors


@dataclass
class NoiseConfig:
    model: NoiseKind = NoiseKind.POISSON
    lam: float | None = None
    a: float | None = None
    b: float = 0.0
    sigma: float | None = None

    def validate(self) -> list[str]:
        errors = []
        if self.model == NoiseKind.POISSON:
            if self.lam is None and self.a is None:
                errors.append("noise.lambda or noise.a is required for the poisson model")
        if self.model == NoiseKind.POISSON_GAUSS and self.a is None and self.lam is None:
            errors.append("noise.a or noise.lambda is required for the poisson_gauss model")
        if self.model == NoiseKind.GAUSS and self.sigma is None:
            errors.append("noise.sigma is required for the gauss model")
        if self.lam is not None and self.lam <= 0:
            errors.append("noise.lambda must be > 0")
        if self.a is not None and self.a <= 0:
            errors.append("noise.a must be > 0")
        if self.b < 0:
            errors.append("noise.b must be >= 0")
        if self.sigma is not None and self.sigma <= 0:
            errors.append("noise.sigma must be > 0")
        return errors


@dataclass
class BenchConfig:
    lambdas: tuple[float, ...] = (5.0, 25.0, 50.0)
    max_gap_db: float = 0.5
    min_gain_db: float = 3.0
    swap_lambda: float = 50.0
    threads: int = 1

    def validate(self) -> list[str]:
        errors = []
        if not self.lambdas:
            errors.append("bench.lambdas must not be empty")
        if any(lam <= 0 for lam in self.lambdas):
            errors.append("bench.lambdas must all be > 0")
        if self.threads < 1:
            errors.append("bench.threads must be >= 1")
        return errors


@dataclass
class OutputConfig:
    bit_depth: int = 8

    def validate(self) -> list[str]:
        if self.bit_depth not in (8, 16):
            return ["output.bit_depth must be 8 or 16"]
        return []


@dataclass
class LoggingConfig:
    level: LogLevel = LogLevel.INFO


@dataclass
class N2vstConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train_denoiser: DenoiserConfig | None = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @property
    def training_denoiser(self) -> DenoiserConfig:
        """Denoiser wrapped by the blind-spot construction during training."""
        return self.train_denoiser if self.train_denoiser is not None else self.denoiser

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "N2vstConfig":
        """Parse configuration from a dictionary."""

        def parse_train(d: dict) -> TrainConfig:
            return TrainConfig(
                iterations=int(d.get("iterations", 2000)),
                batch=int(d.get("batch", 4)),
                patch=int(d.get("patch", 64)),
                lr0=float(d.get("lr0", 0.01)),
                lr_drop_factor=float(d.get("lr_drop_factor", 10.0)),
                sigma_d=float(d.get("sigma_d", DEFAULT_SIGMA_D)),
                stride_k=int(d.get("stride_k", 4)),
                seed=int(d.get("seed", 0)),
                shared_vst_across_channels=bool(d.get("shared_vst_across_channels", True)),
                n_knots=int(d.get("n_knots", 128)),
                log_every=int(d.get("log_every", 100)),
            )

        def parse_denoiser(d: dict) -> DenoiserConfig:
            return DenoiserConfig(
                kind=DenoiserKind(d.get("kind", "dct")),
                blur_sigma=float(d.get("blur_sigma", 1.0)),
                dct_patch=int(d.get("dct_patch", 8)),
                dct_stride=int(d.get("dct_stride", 4)),
                threshold_factor=float(d.get("threshold_factor", 3.0)),
                weights=d.get("weights", ""),
            )

        def parse_noise(d: dict) -> NoiseConfig:
            return NoiseConfig(
                model=NoiseKind(d.get("model", "poisson")),
                lam=_optional_float(d.get("lambda")),
                a=_optional_float(d.get("a")),
                b=float(d.get("b", 0.0)),
                sigma=_optional_float(d.get("sigma")),
            )

        def parse_bench(d: dict) -> BenchConfig:
            return BenchConfig(
                lambdas=tuple(float(x) for x in d.get("lambdas", [5.0, 25.0, 50.0])),
                max_gap_db=float(d.get("max_gap_db", 0.5)),
                min_gain_db=float(d.get("min_gain_db", 3.0)),
                swap_lambda=float(d.get("swap_lambda", 50.0)),
                threads=int(d.get("threads", threads_from_env())),
            )

        def parse_output(d: dict) -> OutputConfig:
            return OutputConfig(bit_depth=int(d.get("bit_depth", 8)))

        def parse_logging(d: dict) -> LoggingConfig:
            return LoggingConfig(level=LogLevel(d.get("level", "info")))

        train_denoiser_data = data.get("train_denoiser")
        return cls(
            train=parse_train(data.get("train", {})),
            denoiser=parse_denoiser(data.get("denoiser", {})),
            train_denoiser=parse_denoiser(train_denoiser_data) if train_denoiser_data else None,
            noise=parse_noise(data.get("noise", {})),
            bench=parse_bench(data.get("bench", {})),
            output=parse_output(data.get("output", {})),
            logging=parse_logging(data.get("logging", {})),
        )

    @classmethod
    def from_yaml(cls, path: Path) -> "N2vstConfig":
        """Load configuration from a YAML file."""
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        """Plain, JSON-serializable view of the resolved configuration."""
        return _plain(asdict(self))

    def validate(self) -> list[str]:
        """Validate configuration and return list of errors."""
        errors = []
        errors.extend(self.train.validate())
        errors.extend(self.denoiser.validate("denoiser"))
        if self.train_denoiser is not None:
            errors.extend(self.train_denoiser.validate("train_denoiser"))
        errors.extend(self.bench.validate())
        errors.extend(self.output.validate())
        return errors


def threads_from_env() -> int:
    """Worker thread cap from N2VST_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _optional_float(value: Any) -> float | None:
    return None if value is None else float(value)


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value
