"""The assembled network: backbone, class centers, attention heads and classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import afn, fcn, functional as F
from .afn import LossWeights
from .fcn import Backbone, BackbonePlan, ClassCenters, ConfigError
from .man import AttentionHead, ManOutput, man_forward
from .nn import Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    plan: BackbonePlan = field(default_factory=BackbonePlan.toy)
    num_heads: int = 4
    num_classes: int = 7
    spatial_reduction: int = 2
    channel_reduction: int = 4

    def __post_init__(self):
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def feature_dim(self) -> int:
        return self.plan.feature_dim


@dataclass
class Forward:
    feature_maps: Tensor  # (B, D, h, w)
    features: Tensor  # (B, D) pooled backbone output
    man: ManOutput
    scaled: Tensor  # (B, K, L) head-wise log-softmax
    logits: Tensor  # (B, classes)


@dataclass
class Losses:
    affinity: Optional[Tensor]
    partition: Optional[Tensor]
    classification: Tensor
    total: Tensor

    def components(self) -> dict[str, float]:
        return {
            "affinity": 0.0 if self.affinity is None else self.affinity.item(),
            "partition": 0.0 if self.partition is None else self.partition.item(),
            "classification": self.classification.item(),
        }


class DAN(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        D = config.feature_dim
        self.backbone = Backbone(config.plan, rng)
        self.centers = ClassCenters(D, config.num_classes, rng)
        self.heads = [
            AttentionHead(D, rng, config.spatial_reduction, config.channel_reduction)
            for _ in range(config.num_heads)
        ]
        self.classifier = Linear(D, config.num_classes, rng)

    def forward(self, images: Tensor) -> Forward:
        maps = self.backbone(images)
        features = fcn.pooled_features(maps)
        out = man_forward(maps, self.heads)
        v = afn.scale_features(out.vectors)
        logits = afn.fuse_and_classify(v, self.classifier)
        return Forward(maps, features, out, v, logits)

    def losses(self, fwd: Forward, labels: Sequence[int], weights: LossWeights) -> Losses:
        """All loss terms. Zero-weighted terms are still evaluated (detached) for logging."""
        af = fcn.affinity_loss(fwd.features, labels, self.centers)
        pt = afn.partition_loss(fwd.scaled) if self.config.num_heads > 1 else None
        cls = afn.cross_entropy(fwd.logits, labels)
        total = afn.total_loss(
            af if weights.affinity else None,
            pt if weights.partition else None,
            cls,
            weights,
        )
        if not weights.affinity:
            af = af.detach()
        if pt is not None and not weights.partition:
            pt = pt.detach()
        return Losses(af, pt, cls, total)

    def predict_scores(self, images: Tensor) -> np.ndarray:
        """Class probabilities for ``images`` (no graph recorded by caller's choice)."""
        return F.softmax(self.forward(images).logits.data, axis=1)


def build_model(config: ModelConfig, seed: int) -> DAN:
    return DAN(config, np.random.default_rng(seed))
