"""Toy multi-branch patch training network and its bridge service."""

from .bridge import TrainerBridge, serve_bridge
from .config import PatchNetConfig
from .data import make_dataset
from .model import MultiPatchNet, load_checkpoint, normalize_patches, save_checkpoint
from .training import TrainingLog, branch_gradient_norms, compute_losses, train_toy

__all__ = [
    "MultiPatchNet",
    "PatchNetConfig",
    "TrainerBridge",
    "TrainingLog",
    "branch_gradient_norms",
    "compute_losses",
    "load_checkpoint",
    "make_dataset",
    "normalize_patches",
    "save_checkpoint",
    "serve_bridge",
    "train_toy",
]
