import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("stress", deadline=None, max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_params(rng, level_counts, p):
    from mixseq.kernels import KernelParams

    q = len(level_counts)
    return KernelParams(
        rng.uniform(0.3, 2.0, q),
        np.exp(rng.uniform(np.log(0.5), np.log(20.0), (q, p))),
        tuple(rng.uniform(0.2, np.pi - 0.2, m * (m - 1) // 2) for m in level_counts),
    )


def random_data(rng, n, level_counts, p):
    X = rng.random((n, p))
    Z = np.column_stack([rng.integers(1, m + 1, n) for m in level_counts])
    return X, Z
