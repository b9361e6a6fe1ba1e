"""Multi-head attention: K independent spatial+channel attention heads."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import functional as F
from .nn import Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, stack


class SpatialUnit(Module):
    """Multi-scale convolution stack ending in a sigmoid gate over the feature map.

    1x1 (D -> D/r) -> 1x3 -> 3x1 (width D/r, size preserving) -> 3x3 (D/r -> D).
    """

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 2):
        super().__init__()
        mid = max(1, channels // reduction)
        self.channels = channels
        # no normalization between the convolutions: fan-in uniform init keeps
        # the gate away from saturation at the start of training
        self.reduce = Conv2d(channels, mid, 1, rng, init="uniform")
        self.conv_1x3 = Conv2d(mid, mid, (1, 3), rng, padding=(0, 1), init="uniform")
        self.conv_3x1 = Conv2d(mid, mid, (3, 1), rng, padding=(1, 0), init="uniform")
        self.restore = Conv2d(mid, channels, 3, rng, padding=1, init="uniform")

    def convs(self) -> list[Conv2d]:
        return [self.reduce, self.conv_1x3, self.conv_3x1, self.restore]

    def gate(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"spatial unit for {self.channels} channels got input {x.shape}")
        y = x
        for conv in self.convs():
            y = conv(y)
        return F.sigmoid(y)

    def forward(self, x: Tensor) -> Tensor:
        return self.gate(x)


class ChannelUnit(Module):
    """Pooled squeeze/excite gate: sigmoid(W2 relu(W1 gap(s)))."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        super().__init__()
        self.channels = channels
        self.squeeze = Linear(channels, max(1, channels // reduction), rng)
        self.excite = Linear(max(1, channels // reduction), channels, rng)

    def gate(self, s: Tensor) -> Tensor:
        if s.ndim != 4 or s.shape[1] != self.channels:
            raise ShapeError(f"channel unit for {self.channels} channels got input {s.shape}")
        return F.sigmoid(self.excite(F.relu(self.squeeze(F.global_avg_pool(s)))))

    def forward(self, s: Tensor) -> Tensor:
        return self.gate(s)


def spatial_attention(x: Tensor, unit: SpatialUnit) -> tuple[Tensor, Tensor]:
    """Return ``(x * gate, gate)`` with the gate produced by ``unit``."""
    gate = unit.gate(x)
    return x * gate, gate


def channel_attention(s: Tensor, unit: ChannelUnit) -> tuple[Tensor, Tensor]:
    """Gate channels of ``s`` and pool the gated map into a (B, D) vector."""
    gate = unit.gate(s)
    gated = s * gate.reshape(gate.shape[0], gate.shape[1], 1, 1)
    return F.global_avg_pool(gated), gate


class AttentionHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator, spatial_reduction: int = 2, channel_reduction: int = 4):
        super().__init__()
        self.spatial = SpatialUnit(channels, rng, spatial_reduction)
        self.channel = ChannelUnit(channels, rng, channel_reduction)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        s, spatial_gate = spatial_attention(x, self.spatial)
        a, _ = channel_attention(s, self.channel)
        return a, spatial_gate

    def macs(self, h: int, w: int) -> int:
        return sum(c.macs(h, w) for c in self.spatial.convs()) + self.channel.squeeze.macs() + self.channel.excite.macs()


@dataclass
class ManOutput:
    vectors: Tensor  # (B, K, L)
    spatial_gates: Tensor  # (B, K, D, h, w)

    @property
    def num_heads(self) -> int:
        return self.vectors.shape[1]


def man_forward(x: Tensor, heads: Sequence[AttentionHead]) -> ManOutput:
    """Run every head on the same feature map and stack results in head order."""
    if not heads:
        raise ValueError("man_forward needs at least one attention head")
    vectors, gates = zip(*(head(x) for head in heads))
    return ManOutput(stack(vectors, axis=1), stack(gates, axis=1))


def head_overlap(spatial_gates) -> np.ndarray:
    """Mean (over the batch) pairwise cosine similarity between flattened head gates."""
    g = spatial_gates.data if isinstance(spatial_gates, Tensor) else np.asarray(spatial_gates, dtype=np.float64)
    if g.ndim < 3:
        raise ShapeError(f"expected (B, K, ...) gates, got shape {g.shape}")
    B, K = g.shape[:2]
    if K < 2:
        raise ValueError("head overlap needs at least two heads")
    flat = g.reshape(B, K, -1)
    norms = np.linalg.norm(flat, axis=2, keepdims=True)
    unit = flat / np.where(norms > 0, norms, 1.0)
    sims = np.einsum("bkn,bjn->bkj", unit, unit).mean(axis=0)
    sims = 0.5 * (sims + sims.T)
    np.fill_diagonal(sims, 1.0)
    return np.clip(sims, -1.0, 1.0)


def mean_off_diagonal(matrix: np.ndarray) -> float:
    K = matrix.shape[0]
    return float((matrix.sum() - np.trace(matrix)) / (K * (K - 1)))
