import numpy as np
import pytest

from tractcloud import geometry


def random_resampled(rng, n, m=15, scale=10.0):
    """(n, m, 3) array of random smooth-ish resampled streamlines."""
    out = []
    for _ in range(n):
        raw = rng.normal(size=(rng.integers(4, 12), 3)) * scale
        out.append(geometry.resample(raw, m))
    return np.stack(out)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
