import numpy as np
import pytest
from hypothesis import settings

from voidface.scenarios import synthetic_bundle, synthetic_patch

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


class ZeroRng:
    """Degenerate random source: every byte is zero."""

    def bytes(self, n: int) -> bytes:
        return bytes(n)

    def integers(self, high):
        return 0


@pytest.fixture
def rng():
    return np.random.default_rng(0xFACE)


@pytest.fixture
def zero_rng():
    return ZeroRng()


@pytest.fixture
def patch96(rng):
    return synthetic_patch(0, size=96)


@pytest.fixture
def bundle96():
    return synthetic_bundle(subject_id=bytes(range(16)), size=96)


@pytest.fixture
def small_bundle():
    return synthetic_bundle(subject_id=bytes(range(16)), size=16)
