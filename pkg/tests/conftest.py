import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

settings.register_profile(
    "default", max_examples=100, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**32 - 1)


def points(min_n=1, max_n=60):
    return hnp.arrays(np.float64, st.tuples(st.integers(min_n, max_n), st.just(3)), elements=finite)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def plane_patch(n, size=2.0, seed=0):
    r = np.random.default_rng(seed)
    xy = r.random((n, 2)) * size
    return np.column_stack([xy, np.zeros(n)])
