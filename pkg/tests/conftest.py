import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# deterministic property tests: the same examples on every run
settings.register_profile(
    "repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
