"""
Unit tests for constants configuration.
"""
import pytest
import sys
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.constants import Config, config


class TestConstants:
    """Test cases for configuration constants."""

    def test_default_config_is_valid(self):
        """The shipped defaults produce no problems."""
        problems = config.validate()
        assert isinstance(problems, list), "validate should return a list"
        assert problems == []

    def test_config_attributes(self):
        """Test that essential config attributes exist."""
        essential_attrs = [
            'NORM_CUTOFF',
            'TABLE_SIZE',
            'NORM_TOL',
            'K_CAP',
            'J_MAX',
            'CONFIDENCE',
            'BETA0',
            'WORKERS',
            'CHUNK_SIZE',
            'OUTPUT_ROOT',
            'CACHE_DIR',
        ]

        for attr in essential_attrs:
            assert hasattr(config, attr), f"Config should have {attr} attribute"
            assert getattr(config, attr) is not None, f"Config.{attr} should not be None"

    def test_numeric_configs(self):
        """Test that numeric configurations have correct types."""
        assert isinstance(config.K_CAP, int), "K_CAP should be an integer"
        assert isinstance(config.TABLE_SIZE, int), "TABLE_SIZE should be an integer"
        assert config.NORM_CUTOFF >= config.TABLE_SIZE, "the cutoff covers the table"
        assert 0 < config.CONFIDENCE < 1, "CONFIDENCE should be between 0 and 1"

    def test_environment_override(self, monkeypatch):
        """Environment variables override the defaults."""
        monkeypatch.setenv("PINNING_K_CAP", "123")
        monkeypatch.setenv("PINNING_BETA0", "0.5")
        fresh = Config()
        assert fresh.K_CAP == 123
        assert fresh.BETA0 == 0.5

    def test_invalid_values_reported(self, monkeypatch):
        """Each broken setting yields its own message."""
        monkeypatch.setenv("PINNING_CONFIDENCE", "1.5")
        monkeypatch.setenv("PINNING_TABLE_SIZE", "10")
        monkeypatch.setenv("LOG_LEVEL", "LOUD")
        problems = Config().validate()
        assert len(problems) == 3
        assert any("PINNING_CONFIDENCE" in p for p in problems)
        assert any("PINNING_TABLE_SIZE" in p for p in problems)
        assert any("LOG_LEVEL" in p for p in problems)

    def test_print_config(self, capsys):
        config.print_config()
        output = capsys.readouterr().out
        assert "Pinning Lab Configuration" in output
        assert "k cap" in output


if __name__ == "__main__":
    pytest.main([__file__])
