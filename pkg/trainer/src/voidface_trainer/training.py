"""Training loop: SGD with momentum, cosine-annealed learning rate, and
per-step loss decomposition logging.

V1 optimizes the aggregator head's classification loss alone; V2 adds
the six unit-weighted patch-head losses, and the logged total always
equals the logged components' sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .config import PatchNetConfig
from .data import make_dataset
from .model import MultiPatchNet, normalize_patches


@dataclass
class TrainingLog:
    config: PatchNetConfig
    step_losses: list[dict] = field(default_factory=list)
    accuracy_curve: list[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracy_curve[-1] if self.accuracy_curve else 0.0


def compute_losses(
    model: MultiPatchNet, batch: torch.Tensor, target: torch.Tensor
) -> tuple[torch.Tensor, dict]:
    """Total loss plus its logged decomposition.

    The total is accumulated in float64 so the logged components sum to
    the logged total at 1e-6, not just to float32 rounding.
    """
    agg_logits, patch_logits = model.logits(batch, target)
    agg_loss = nn.functional.cross_entropy(agg_logits, target)
    components = {"aggregator": float(agg_loss.detach())}
    total = agg_loss.double()
    for i, logits in enumerate(patch_logits):
        patch_loss = nn.functional.cross_entropy(logits, target)
        total = total + model.cfg.patch_loss_weight * patch_loss.double()
        components[f"patch_{i}"] = float(patch_loss.detach())
    components["total"] = float(total.detach())
    return total, components


@torch.no_grad()
def evaluate_accuracy(model: MultiPatchNet, data: torch.Tensor, labels: torch.Tensor) -> float:
    model.eval()
    correct = 0
    for start in range(0, len(data), 50):
        batch = normalize_patches(data[start : start + 50])
        logits, _ = model.logits(batch)
        correct += int((logits.argmax(dim=1) == labels[start : start + 50]).sum())
    model.train()
    return correct / len(data)


def train_toy(
    cfg: PatchNetConfig,
    data: torch.Tensor | None = None,
    labels: torch.Tensor | None = None,
    bundles_per_class: int = 20,
) -> tuple[MultiPatchNet, TrainingLog]:
    """Train on the synthetic dataset (or a provided one) and return the
    model with its loss/accuracy log."""
    torch.manual_seed(cfg.seed)
    if data is None:
        data, labels = make_dataset(cfg, bundles_per_class=bundles_per_class, seed=cfg.seed)
    if int(labels.unique().numel()) < 2:
        raise ValueError("degenerate dataset: need at least 2 distinct classes")

    model = MultiPatchNet(cfg)
    model.train()
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr_max, momentum=cfg.momentum)
    steps_per_epoch = max(1, len(data) // cfg.batch_size)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=cfg.epochs * steps_per_epoch, eta_min=cfg.lr_min
    )
    log = TrainingLog(config=cfg)

    generator = torch.Generator().manual_seed(cfg.seed)
    for epoch in range(cfg.epochs):
        order = torch.randperm(len(data), generator=generator)
        for start in range(0, steps_per_epoch * cfg.batch_size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = normalize_patches(data[idx])
            target = labels[idx]
            total, components = compute_losses(model, batch, target)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            scheduler.step()
            components["lr"] = scheduler.get_last_lr()[0]
            components["epoch"] = epoch
            log.step_losses.append(components)
        log.accuracy_curve.append(evaluate_accuracy(model, data, labels))
    return model, log


def branch_gradient_norms(
    model: MultiPatchNet, batch: torch.Tensor, target: torch.Tensor
) -> list[float]:
    """Per-branch parameter gradient norms after one backward pass."""
    model.zero_grad()
    total, _ = compute_losses(model, batch, target)
    total.backward()
    norms = []
    for branch in model.branches:
        sq = 0.0
        for p in branch.parameters():
            if p.grad is not None:
                sq += float(p.grad.pow(2).sum())
        norms.append(sq**0.5)
    model.zero_grad()
    return norms
