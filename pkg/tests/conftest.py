import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surgformer.dataio import TrialRecord
from surgformer.numerics import reset_tape

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _clean_tape():
    reset_tape()
    yield
    reset_tape()


def random_trial(length=60, subject="B", trial_id=None, seed=0, n_classes=16, rate_hz=30):
    rng = np.random.default_rng(seed)
    kin = rng.normal(size=(length, 76))
    g = np.repeat(rng.integers(0, n_classes, size=length // 5 + 1), 5)[:length]
    return TrialRecord(subject, trial_id or f"Suturing_{subject}001", rate_hz, kin, g)
