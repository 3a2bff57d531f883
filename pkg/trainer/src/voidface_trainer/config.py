"""Training configuration."""

from dataclasses import dataclass


@dataclass(frozen=True)
class PatchNetConfig:
    """Hyperparameters for the multi-branch patch network.

    V1 supervises only the aggregated embedding (one classification
    head); V2 adds a head per patch branch, so head count is n_p + 1.
    """

    n_p: int = 6
    embedding_dim: int = 512
    variant: str = "V1"  # or "V2"
    input_size: int = 96
    channels: int = 3
    width_multiplier: float = 1.4
    base_channels: tuple[int, ...] = (8, 16, 32)
    patch_loss_weight: float = 1.0
    margin: float = 0.5
    logit_scale: float = 16.0
    momentum: float = 0.5
    lr_max: float = 0.01
    lr_min: float = 1e-7
    batch_size: int = 10
    epochs: int = 5
    classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("V1", "V2"):
            raise ValueError(f"variant must be V1 or V2, got {self.variant!r}")

    @property
    def head_count(self) -> int:
        return self.n_p + 1 if self.variant == "V2" else 1

    def widened(self, c: int) -> int:
        return max(1, round(c * self.width_multiplier))
