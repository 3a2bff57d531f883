"""Multi-branch patch network: one small CNN per facial patch plus a
fully connected aggregator producing the global 512-d face embedding.

Classification heads use an additive angular margin on normalized
embeddings and weights; in V2 the same margin head sits on every patch
branch as well as the aggregator.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import PatchNetConfig


def normalize_patches(raw: torch.Tensor) -> torch.Tensor:
    """Map raw 8-bit patch values to network inputs: (x - 0.5) / 255 per
    channel. Accepts (..., 6, C, H, W) or (..., C, H, W) uint8/float."""
    return (raw.float() - 0.5) / 255.0


class PatchEncoder(nn.Module):
    """Three conv-BN-ReLU blocks and a projection to the embedding."""

    def __init__(self, cfg: PatchNetConfig):
        super().__init__()
        widths = [cfg.widened(c) for c in cfg.base_channels]
        layers: list[nn.Module] = []
        in_ch = cfg.channels
        for out_ch in widths:
            layers += [
                nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            in_ch = out_ch
        self.blocks = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.project = nn.Linear(widths[-1] * 16, cfg.embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.pool(self.blocks(x))
        return self.project(feats.flatten(1))


class MarginHead(nn.Module):
    """Additive angular margin classifier on normalized features."""

    def __init__(self, embedding_dim: int, classes: int, margin: float, scale: float):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(classes, embedding_dim))
        nn.init.xavier_uniform_(self.weight)
        self.margin = margin
        self.scale = scale

    def forward(self, embedding: torch.Tensor, target: torch.Tensor | None = None) -> torch.Tensor:
        cosine = nn.functional.linear(
            nn.functional.normalize(embedding), nn.functional.normalize(self.weight)
        ).clamp(-1 + 1e-7, 1 - 1e-7)
        if target is None:
            return self.scale * cosine
        theta = torch.acos(cosine)
        # Margin only on the true-class angle, standard additive form.
        target_mask = nn.functional.one_hot(target, cosine.size(1)).bool()
        with_margin = torch.cos(torch.clamp(theta + self.margin, max=math.pi - 1e-7))
        return self.scale * torch.where(target_mask, with_margin, cosine)


class MultiPatchNet(nn.Module):
    """n_p independent patch encoders feeding one aggregator layer.

    forward() returns the global embedding; forward_full() additionally
    returns per-patch embeddings for patch-level supervision.
    """

    def __init__(self, cfg: PatchNetConfig):
        super().__init__()
        self.cfg = cfg
        self.branches = nn.ModuleList(PatchEncoder(cfg) for _ in range(cfg.n_p))
        self.aggregator = nn.Linear(cfg.n_p * cfg.embedding_dim, cfg.embedding_dim)
        self.head = MarginHead(cfg.embedding_dim, cfg.classes, cfg.margin, cfg.logit_scale)
        if cfg.variant == "V2":
            self.patch_heads = nn.ModuleList(
                MarginHead(cfg.embedding_dim, cfg.classes, cfg.margin, cfg.logit_scale)
                for _ in range(cfg.n_p)
            )
        else:
            self.patch_heads = None

    def _check_shape(self, bundle: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if bundle.dim() == 4:
            bundle = bundle.unsqueeze(0)
        expected = (cfg.n_p, cfg.channels, cfg.input_size, cfg.input_size)
        if tuple(bundle.shape[1:]) != expected:
            raise ValueError(
                f"bundle shape {tuple(bundle.shape[1:])} does not match {expected}"
            )
        return bundle

    def patch_embeddings(self, bundle: torch.Tensor) -> torch.Tensor:
        bundle = self._check_shape(bundle)
        return torch.stack(
            [branch(bundle[:, i]) for i, branch in enumerate(self.branches)], dim=1
        )

    def forward_full(self, bundle: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        per_patch = self.patch_embeddings(bundle)
        global_embedding = self.aggregator(per_patch.flatten(1))
        return global_embedding, per_patch

    def forward(self, bundle: torch.Tensor) -> torch.Tensor:
        return self.forward_full(bundle)[0]

    def logits(
        self, bundle: torch.Tensor, target: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Aggregator logits plus (V2 only) one logits tensor per patch."""
        global_embedding, per_patch = self.forward_full(bundle)
        agg_logits = self.head(global_embedding, target)
        patch_logits = []
        if self.patch_heads is not None:
            patch_logits = [
                head(per_patch[:, i], target) for i, head in enumerate(self.patch_heads)
            ]
        return agg_logits, patch_logits


CHECKPOINT_FORMAT = "voidface-trainer-ckpt"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: MultiPatchNet, path) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": model.cfg.__dict__,
            "state": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> MultiPatchNet:
    doc = torch.load(path, weights_only=False)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a trainer checkpoint: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = PatchNetConfig(**doc["config"])
    model = MultiPatchNet(cfg)
    model.load_state_dict(doc["state"])
    return model
