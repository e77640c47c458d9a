import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffeye.synthdata import SynthConfig, generate_sequence

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_seq():
    """A short noiseless 64x64 sequence shared by cheap tests."""
    return generate_sequence(SynthConfig(n_frames=3, width=64, height=64, f_range=(50.0, 65.0), seed=11))


@pytest.fixture(scope="session")
def seq4():
    return generate_sequence(SynthConfig(n_frames=4, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
