import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_survival(rng, n, p, censor=0.3, ties=False):
    """Small random right-censored problem (Z, times, events)."""
    Z = rng.standard_normal((n, p))
    times = rng.exponential(size=n) + 0.01
    if ties:
        times = np.round(times * 4) / 4 + 0.25
    events = rng.random(n) > censor
    if not events.any():
        events[0] = True
    return Z, times, events
