"""Feature clustering: residual backbone, pooled features and the affinity loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import functional as F
from .functional import check_labels
from .nn import BatchNorm, Conv2d, Module
from .tensor import ShapeError, Tensor, maximum_floor

CENTER_STD_FLOOR = 1e-8


class ConfigError(ValueError):
    """Invalid architecture or run configuration."""


@dataclass(frozen=True)
class BackbonePlan:
    """Architecture descriptor for the residual backbone.

    ``stem="small"`` is a single 3x3 stride-1 convolution; ``stem="imagenet"``
    is the 7x7 stride-2 convolution followed by 3x3 stride-2 max pooling.
    """

    widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    strides: tuple[int, ...] = (1, 2, 2, 2)
    stem: str = "small"
    in_channels: int = 3

    def __post_init__(self):
        if not (len(self.widths) == len(self.blocks) == len(self.strides)) or not self.widths:
            raise ConfigError("widths, blocks and strides must be non-empty and equally long")
        if self.stem not in ("small", "imagenet"):
            raise ConfigError(f"unknown stem {self.stem!r}")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError(f"stage strides must be 1 or 2, got {self.strides}")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def downsample(self) -> int:
        factor = 4 if self.stem == "imagenet" else 1
        for s in self.strides:
            factor *= s
        return factor

    def feature_size(self, size: int) -> int:
        return size // self.downsample

    @classmethod
    def toy(cls) -> "BackbonePlan":
        return cls()

    @classmethod
    def resnet18(cls) -> "BackbonePlan":
        return cls(widths=(64, 128, 256, 512), blocks=(2, 2, 2, 2), strides=(1, 2, 2, 2), stem="imagenet")


class BasicBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride, bias=False)
            self.proj_bn = BatchNorm(cout)
        else:
            self.proj = None
            self.proj_bn = None
        self.stride = stride

    def shortcut(self, x: Tensor) -> Tensor:
        if self.proj is None:
            return x
        return self.proj_bn(self.proj(x))

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Backbone(Module):
    """Residual feature extractor mapping images to (B, D, h, w) feature maps."""

    def __init__(self, plan: BackbonePlan, rng: np.random.Generator):
        super().__init__()
        self.plan = plan
        w0 = plan.widths[0]
        if plan.stem == "imagenet":
            self.stem = Conv2d(plan.in_channels, w0, 7, rng, stride=2, padding=3, bias=False)
        else:
            self.stem = Conv2d(plan.in_channels, w0, 3, rng, stride=1, padding=1, bias=False)
        self.stem_bn = BatchNorm(w0)
        blocks = []
        cin = w0
        for width, count, stride in zip(plan.widths, plan.blocks, plan.strides):
            for b in range(count):
                blocks.append(BasicBlock(cin, width, stride if b == 0 else 1, rng))
                cin = width
        self.blocks = blocks

    def forward(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != self.plan.in_channels:
            raise ShapeError(f"backbone expects (B, {self.plan.in_channels}, H, W), got {images.shape}")
        H, W = images.shape[2:]
        k = self.plan.downsample
        if H % k or W % k:
            raise ConfigError(f"input size {H}x{W} not divisible by the backbone downsampling factor {k}")
        x = F.relu(self.stem_bn(self.stem(images)))
        if self.plan.stem == "imagenet":
            x = F.max_pool2d(x, 3, 2, 1)
        for block in self.blocks:
            x = block(x)
        return x

    def macs(self, size: int) -> int:
        """Multiply-accumulates of all convolutions for a ``size`` x ``size`` input."""
        total = 0
        h = size
        stem = self.stem
        h = F.conv_output_size(h, stem.weight.shape[2], stem.padding[0], stem.stride)
        total += stem.macs(h, h)
        if self.plan.stem == "imagenet":
            h = F.conv_output_size(h, 3, 1, 2)
        for block in self.blocks:
            h_out = F.conv_output_size(h, 3, 1, block.stride)
            total += block.conv1.macs(h_out, h_out) + block.conv2.macs(h_out, h_out)
            if block.proj is not None:
                total += block.proj.macs(h_out, h_out)
            h = h_out
        return total


def pooled_features(feature_maps: Tensor) -> Tensor:
    """Global-average-pool (B, D, h, w) maps into (B, D) vectors."""
    return F.global_avg_pool(feature_maps)


class ClassCenters(Module):
    """Learnable class centers, one column of a (D, num_classes) matrix per class."""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator, trainable: bool = True):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("class centers need at least two classes")
        self.c = Tensor(rng.normal(0.0, 1.0, size=(dim, num_classes)), requires_grad=trainable)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def num_classes(self) -> int:
        return self.c.shape[1]


def _centers_tensor(centers) -> Tensor:
    return centers.c if isinstance(centers, ClassCenters) else centers


def center_variance(centers, floor: float = CENTER_STD_FLOOR) -> Tensor:
    """Squared spread of the centers, floored at ``floor**2``.

    Population variance across class columns, averaged over dimensions.
    """
    c = _centers_tensor(centers)
    if c.ndim != 2 or c.shape[1] < 2:
        raise ValueError(f"center spread needs a (D, classes>=2) matrix, got shape {c.shape}")
    return maximum_floor(F.population_var(c, axis=1).mean(), floor * floor)


def center_std(centers, floor: float = CENTER_STD_FLOOR) -> Tensor:
    return center_variance(centers, floor).sqrt()


def affinity_loss(features: Tensor, labels: Sequence[int], centers) -> Tensor:
    """Summed squared feature-to-own-center distance over the squared center spread."""
    c = _centers_tensor(centers)
    if features.ndim != 2 or features.shape[1] != c.shape[0]:
        raise ShapeError(f"features {features.shape} do not match centers {c.shape}")
    labels = check_labels(labels, c.shape[1])
    if labels.shape[0] != features.shape[0] or labels.shape[0] < 1:
        raise ShapeError(f"{labels.shape[0]} labels for {features.shape[0]} features")
    own = c.T[labels]
    diff = features - own
    return (diff * diff).sum() / center_variance(c)


def normalized_center_distance(features: np.ndarray, labels: Sequence[int], centers) -> float:
    """Mean feature-to-own-center distance divided by the center spread (no graph)."""
    c = _centers_tensor(centers).data
    labels = check_labels(labels, c.shape[1])
    dist = np.linalg.norm(features - c.T[labels], axis=1).mean()
    spread = np.sqrt(max(c.var(axis=1).mean(), CENTER_STD_FLOOR**2))
    return float(dist / spread)
