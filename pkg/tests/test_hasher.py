"""Tests for n2vst.hasher."""

import hashlib

from n2vst.config import N2vstConfig
from n2vst.hasher import compute_config_hash, compute_file_checksum


class TestComputeConfigHash:
    def test_deterministic(self):
        config = N2vstConfig().to_dict()

        hash1 = compute_config_hash(config)
        hash2 = compute_config_hash(config)

        assert hash1 == hash2
        assert len(hash1) == 64  # SHA256 hex

    def test_key_order_independent(self):
        assert compute_config_hash({"a": 1, "b": [1, 2]}) == compute_config_hash(
            {"b": [1, 2], "a": 1}
        )

    def test_different_content_different_hash(self):
        config1 = N2vstConfig.from_dict({"train": {"seed": 1}}).to_dict()
        config2 = N2vstConfig.from_dict({"train": {"seed": 2}}).to_dict()

        assert compute_config_hash(config1) != compute_config_hash(config2)


class TestComputeFileChecksum:
    def test_matches_sha256(self, tmp_path):
        path = tmp_path / "data.bin"
        payload = b"n2vst" * 10000
        path.write_bytes(payload)

        assert compute_file_checksum(path) == hashlib.sha256(payload).hexdigest()
