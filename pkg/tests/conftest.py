import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# numerics can be slow on loaded CI boxes; correctness only, no deadlines
settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    print_blob=True,
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
