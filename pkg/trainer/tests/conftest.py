import pytest
import torch

from voidface_trainer.config import PatchNetConfig

torch.set_num_threads(2)


@pytest.fixture
def small_cfg():
    """Shrunken geometry for fast structural tests."""
    return PatchNetConfig(input_size=32, classes=10, seed=3)


@pytest.fixture
def small_cfg_v2():
    return PatchNetConfig(input_size=32, classes=10, seed=3, variant="V2")
