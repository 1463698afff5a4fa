"""Shared pytest setup: import path, testing environment and small fixtures."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
os.environ["JFERC_ENV"] = "testing"

from config.settings import ConfigManager  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance gate (deselect with -m 'not slow')")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def test_config():
    """config/defaults.yaml layered with config/testing.yaml."""
    return ConfigManager(environment="testing", config_dir=ROOT / "config").load()


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path


@pytest.fixture
def synthetic_manifest(tmp_path, test_config):
    """Inline-audio synthetic dataset sized by config/testing.yaml."""
    from harness.synth import synth_from_config
    return synth_from_config(test_config, tmp_path / "data", write_audio=False)
