"""
n2vst.manifest — Run manifests written next to every command output.

A manifest records the argument vector, the resolved configuration and the
digests of inputs and outputs, so a run can be replayed and checked for
bit-identical reproduction.
"""

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from n2vst import __version__
from n2vst.errors import ImageWriteError, ManifestError
from n2vst.hasher import compute_config_hash, compute_file_checksum

MANIFEST_SUFFIX = ".manifest.json"


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any]
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    started_at: str = ""
    duration_s: float = 0.0

    @property
    def config_hash(self) -> str:
        return compute_config_hash(self.config)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(self.inputs),
            "outputs": dict(self.outputs),
            "version": self.version,
            "started_at": self.started_at,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunManifest":
        return cls(
            command=data["command"],
            argv=list(data["argv"]),
            config=data.get("config", {}),
            seed=data.get("seed"),
            inputs=dict(data.get("inputs", {})),
            outputs=dict(data.get("outputs", {})),
            version=data.get("version", ""),
            started_at=data.get("started_at", ""),
            duration_s=float(data.get("duration_s", 0.0)),
        )


def manifest_path(output: Path | str) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def checksums(paths: list[Path | str]) -> dict[str, str]:
    """Digest every existing file, keyed by its path as given."""
    return {str(p): compute_file_checksum(p) for p in paths if Path(p).is_file()}


def write_manifest(path: Path | str, manifest: RunManifest) -> None:
    """Write atomically: temp file, then rename over the target."""
    path = Path(path)
    temp_path = path.with_name(path.name + ".tmp")
    try:
        with open(temp_path, "w", encoding="utf-8") as f:
            json.dump(manifest.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=True)
        temp_path.replace(path)
    except OSError as e:
        raise ImageWriteError(
            stage="write_manifest",
            message=f"cannot write {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e


def load_manifest(path: Path | str) -> RunManifest:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return RunManifest.from_dict(data)
    except OSError as e:
        raise ManifestError(
            stage="load_manifest",
            message=f"cannot read {path}: {e.strerror or e}",
            payload={"path": str(path)},
        ) from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ManifestError(
            stage="load_manifest",
            message=f"malformed manifest {path}: {e}",
            payload={"path": str(path)},
        ) from e


def verify_outputs(manifest: RunManifest) -> list[str]:
    """Outputs whose current digest differs from the recorded one."""
    mismatches = []
    for path, expected in sorted(manifest.outputs.items()):
        if not Path(path).is_file():
            mismatches.append(f"{path}: missing")
            continue
        actual = compute_file_checksum(path)
        if actual != expected:
            mismatches.append(f"{path}: expected {expected[:12]}, got {actual[:12]}")
    return mismatches
