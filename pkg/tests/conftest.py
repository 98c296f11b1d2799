import os

import numpy as np
import pytest

from config import Config

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, "configs")
FIXTURE_DIR = os.path.join(ROOT, "fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    """Keep simulations in-process unless a test asks for workers"""
    monkeypatch.setattr(Config, "BENCH_THREADS", 1)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML experiment file into tmp_path and return its path"""

    def _write(text: str, name: str = "experiment.toml") -> str:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


SMALL_EXPERIMENT = """
name = "small"
horizon = {horizon}
runs = {runs}
seed = 7

[environment]
kind = "synthetic_fixed"
d = 3
K = 12
sigma = 0.5

[[algorithm]]
algorithm = "code"
lambda = 1.0
L = 1.0

[[algorithm]]
algorithm = "linucb"
lambda = 1.0
L = 1.0
"""


@pytest.fixture
def small_config(write_config):
    """Two-algorithm synthetic experiment with a short horizon"""

    def _make(horizon: int = 60, runs: int = 2, name: str = "experiment.toml") -> str:
        return write_config(SMALL_EXPERIMENT.format(horizon=horizon, runs=runs), name)

    return _make
