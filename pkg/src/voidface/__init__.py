"""Privacy-preserving face training data pipeline.

Facial patches are split into noise-like XOR shares: one authentication
share in trusted-party custody, one private share per patch scattered
across storage institutions. Training workstations reassemble patches
only when the vault authorizes a round, and deleting the single
authentication share revokes a subject from all future training.
"""

from .access import (
    AccessStructure,
    build_pair_structure,
    check_monotonicity,
    check_uniqueness,
    is_qualified,
)
from .distribution import PlacementPlan, locate_shares, plan_distribution
from .metrics import (
    adjacent_correlation,
    brute_force_log_probability,
    npcr,
    npcr_campaign,
    patch_share_correlation,
    shannon_entropy,
)
from .patches import IngestionSession, LandmarkSet, PatchBundle, extract_patches, share_bundle
from .shares import (
    PatchImage,
    PatchKind,
    ShareGrid,
    ShareRole,
    bootstrap_first_patch,
    expand_share,
    generate_private_share,
    generate_random_grid,
    reconstruct_patch,
)
from .vault import Vault

__version__ = "0.1.0"

__all__ = [
    "AccessStructure",
    "IngestionSession",
    "LandmarkSet",
    "PatchBundle",
    "PatchImage",
    "PatchKind",
    "PlacementPlan",
    "ShareGrid",
    "ShareRole",
    "Vault",
    "adjacent_correlation",
    "bootstrap_first_patch",
    "brute_force_log_probability",
    "build_pair_structure",
    "check_monotonicity",
    "check_uniqueness",
    "expand_share",
    "extract_patches",
    "generate_private_share",
    "generate_random_grid",
    "is_qualified",
    "locate_shares",
    "npcr",
    "npcr_campaign",
    "patch_share_correlation",
    "plan_distribution",
    "reconstruct_patch",
    "shannon_entropy",
    "share_bundle",
]
