"""Shared fixtures: simulated datasets at the sizes the tests need.

Session scope keeps the expensive draws to one per run; every fixture is
deterministic, so tests may assert exact values against them.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sacemnar.data import Dataset
from sacemnar.simulate import DgpSpec, generate

settings.register_profile(
    "package",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("package")


@pytest.fixture(scope="session")
def base_ds() -> Dataset:
    """One base-scenario sample at the study size."""
    return generate(DgpSpec(scenario="base", n=2000, seed=7))


@pytest.fixture(scope="session")
def base_ds_xl() -> Dataset:
    """Large base-scenario sample for parameter-recovery checks."""
    return generate(DgpSpec(scenario="base", n=100_000, seed=11))


@pytest.fixture(scope="session")
def base_ds_latent() -> Dataset:
    """Base-scenario sample carrying the latent stratum and outcome."""
    return generate(DgpSpec(scenario="base", n=2000, seed=7, emit_latent=True))


@pytest.fixture()
def tiny_ds() -> Dataset:
    """Handmade 12-row dataset covering every (z, s, r) pattern."""
    return Dataset(
        z=np.array([1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0]),
        s=np.array([1, 1, 1, 0, 1, 0, 1, 1, 0, 1, 0, 1]),
        r=np.array([1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1]),
        y=np.array([1, 0, np.nan, np.nan, 1, np.nan, 0, np.nan, np.nan, 1, np.nan, 0]),
        a=np.array([0.5, -1.2, 0.3, 2.0, -0.7, 0.1, 1.5, -0.4, 0.9, -2.1, 0.6, -0.3]),
        c=np.array([[0.2], [1.1], [-0.5], [0.8], [-1.3], [0.4], [-0.9], [1.7], [0.0], [-0.6], [1.2], [-1.8]]),
    )
