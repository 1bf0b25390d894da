from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from insider_acc.scenario import ScenarioConfig, run_scenario

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# the Gaussian scenario every full-size Monte Carlo check refers to
FULL_CONFIG = ScenarioConfig(
    s0=100.0, mu=0.0, sigma=0.2, horizon=1.0, kind="put", strike=100.0,
    epsilon=1.0, n_atoms=16, n_paths=100_000, n_steps=50, seed=2024,
)
assert FULL_CONFIG == ScenarioConfig()


@pytest.fixture(scope="session")
def full_report():
    return run_scenario(FULL_CONFIG)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
