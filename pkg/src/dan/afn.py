"""Attention fusion: head-wise log-softmax scaling, partition loss and the classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Linear
from .tensor import ShapeError, Tensor, maximum_floor

HEAD_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    affinity: float = 1.0
    partition: float = 1.0

    def __post_init__(self):
        for name in ("affinity", "partition"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


def scale_features(a: Tensor) -> Tensor:
    """Log-softmax of (B, K, L) head vectors across the head axis."""
    if a.ndim != 3:
        raise ShapeError(f"scale_features expects (B, K, L), got {a.shape}")
    if a.shape[1] < 1:
        raise ShapeError("scale_features needs at least one head")
    return F.log_softmax(a, axis=1)


def partition_loss(v: Tensor, floor: float = HEAD_VARIANCE_FLOOR) -> Tensor:
    """Mean over batch and feature positions of log(1 + K / var_heads)."""
    if v.ndim != 3:
        raise ShapeError(f"partition_loss expects (B, K, L), got {v.shape}")
    K = v.shape[1]
    if K < 2:
        raise ValueError("partition loss is undefined for a single head; set its weight to 0")
    var = maximum_floor(F.population_var(v, axis=1), floor)
    return (1.0 + float(K) / var).log().mean()


def fuse_and_classify(v: Tensor, classifier: Linear) -> Tensor:
    """Sum scaled vectors over heads and apply the linear classifier."""
    if v.ndim != 3:
        raise ShapeError(f"fuse_and_classify expects (B, K, L), got {v.shape}")
    if classifier.weight.shape[1] != v.shape[2]:
        raise ShapeError(f"classifier width {classifier.weight.shape[1]} != feature length {v.shape[2]}")
    return classifier(v.sum(axis=1))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return F.cross_entropy(logits, labels)


def total_loss(affinity, partition, classification: Tensor, weights: LossWeights) -> Tensor:
    """``w_af * affinity + w_pt * partition + classification``.

    ``affinity`` or ``partition`` may be None when its weight is zero (for
    example the partition term with a single head).
    """
    terms = []
    for value, weight, name in ((affinity, weights.affinity, "affinity"), (partition, weights.partition, "partition")):
        if value is None:
            if weight:
                raise ValueError(f"{name} loss is missing but weighted by {weight}")
            continue
        terms.append(weight * value)
    total = None
    for t in terms:
        total = t if total is None else total + t
    return classification if total is None else total + classification


def combine(affinity: float, partition: float, classification: float, weights: LossWeights) -> float:
    """Float counterpart of :func:`total_loss` with the same evaluation order."""
    return weights.affinity * affinity + weights.partition * partition + classification


def head_normalization_error(v: Tensor) -> float:
    """Largest deviation of sum_j exp(v_j) from one."""
    return float(np.abs(np.exp(v.data).sum(axis=1) - 1.0).max())
