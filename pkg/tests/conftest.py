# file: tests/conftest.py
import numpy as np
import pytest

from app.core.config import settings
from app.services.network_service import build_metropolis, cycle_graph, from_matrix
from app.services.objective_service import decentralized_least_squares
from app.services.preset_service import TOY_MIXING


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Every test writes traces and registry rows under its own temporary directory."""
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setattr(settings, "REGISTRY_DB_PATH", str(tmp_path / "registry.db"))
    return settings


@pytest.fixture
def toy_mix():
    return from_matrix(TOY_MIXING)


@pytest.fixture
def lazy_cycle5():
    # lambda_n ~ 0.397
    return build_metropolis(cycle_graph(5), lazy=True)


@pytest.fixture
def small_lsq():
    objective, truth, data = decentralized_least_squares(seed=7, n=5, p=10, m=20, sparsity=3, noise_std=0.1)
    return objective, truth, data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
