"""
n2vst.hasher — Content digests recorded in run manifests.
"""

import hashlib
import json
from pathlib import Path
from typing import Any


def _normalize_value(value: Any) -> Any:
    """Normalize a value for stable hashing."""
    if value is None:
        return None
    if isinstance(value, (str, int, float, bool)):
        return value
    if isinstance(value, (list, tuple)):
        return [_normalize_value(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _normalize_value(v) for k, v in sorted(value.items())}
    if hasattr(value, "value"):
        return _normalize_value(value.value)
    return str(value)


def compute_file_checksum(path: Path | str, algorithm: str = "sha256") -> str:
    """Digest of a file's bytes."""
    hasher = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def compute_config_hash(config: dict[str, Any]) -> str:
    """
    Deterministic digest of a resolved configuration.

    Stable across runs and key orderings.
    """
    canonical = json.dumps(_normalize_value(config), sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(canonical.encode()).hexdigest()
