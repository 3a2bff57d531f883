"""Random sources for share generation.

Share payloads are one-time-pad material, so the production path draws
from OS entropy. Tests inject a seeded ``numpy.random.Generator`` instead;
both expose the same ``bytes(n)`` method, which is all the share
generators require.
"""

import os

import numpy as np


class SystemEntropy:
    """Cryptographically strong byte source backed by ``os.urandom``."""

    def bytes(self, n: int) -> bytes:
        return os.urandom(n)


def deterministic_rng(seed: int) -> np.random.Generator:
    """Seeded generator for reproducible tests and simulations."""
    return np.random.default_rng(seed)


def entropy_seeded_rng() -> np.random.Generator:
    """Generator seeded from OS entropy, for selection and placement paths
    where reproducibility is not requested."""
    return np.random.default_rng(int.from_bytes(os.urandom(16), "little"))
