"""n2vst tests."""
