"""
n2vst.errors — Typed error model for the denoising toolkit.

All errors are explicitly typed and include:
- stage: pipeline stage where the error occurred
- message: human-readable cause
- payload: snapshot of relevant data
- exit_code: process exit status the CLI maps the error to
"""

from dataclasses import dataclass, field
from typing import Any

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


@dataclass(frozen=True)
class N2vstError(Exception):
    """Base error for all n2vst errors."""
    stage: str
    message: str
    payload: dict[str, Any] = field(default_factory=dict)
    exit_code: int = EXIT_USAGE

    def __str__(self) -> str:
        return f"[{self.stage}] {self.message}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.__class__.__name__,
            "stage": self.stage,
            "message": self.message,
            "payload": self.payload,
            "exit_code": self.exit_code,
        }


@dataclass(frozen=True)
class ImageReadError(N2vstError):
    """Image file missing or unreadable."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class UnsupportedFormatError(N2vstError):
    """Unknown container or unsupported bit depth."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class CorruptImageError(N2vstError):
    """Bad header or truncated payload."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class ImageWriteError(N2vstError):
    """Output path cannot be written."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class ShapeError(N2vstError):
    """Operands with incompatible shapes."""
    pass


@dataclass(frozen=True)
class ParameterError(N2vstError):
    """Invalid parameter value."""
    pass


@dataclass(frozen=True)
class CheckpointError(N2vstError):
    """Malformed VST document or invariant violation on load."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class WeightsFormatError(N2vstError):
    """Bad N2VCNN1 weights file."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class TrainingError(N2vstError):
    """Training refused or diverged."""
    exit_code: int = EXIT_CHECK_FAILED


@dataclass(frozen=True)
class ManifestError(N2vstError):
    """Unreadable or malformed run manifest."""
    exit_code: int = EXIT_IO


@dataclass(frozen=True)
class CorpusError(N2vstError):
    """Benchmark corpus missing or empty."""
    exit_code: int = EXIT_IO


ERROR_TYPES = {
    "ImageReadError": ImageReadError,
    "UnsupportedFormatError": UnsupportedFormatError,
    "CorruptImageError": CorruptImageError,
    "ImageWriteError": ImageWriteError,
    "ShapeError": ShapeError,
    "ParameterError": ParameterError,
    "CheckpointError": CheckpointError,
    "WeightsFormatError": WeightsFormatError,
    "TrainingError": TrainingError,
    "CorpusError": CorpusError,
    "ManifestError": ManifestError,
}
