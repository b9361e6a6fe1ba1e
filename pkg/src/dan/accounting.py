"""Parameter and multiply-accumulate counts from architecture shapes alone.

Nothing here allocates weights; counts follow the layer definitions in
``fcn``, ``man`` and ``model``. FLOPs are reported as multiply-accumulates
(the convention under which the 18-layer residual net costs ~1.8 G at 224 px).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .fcn import BackbonePlan
from .functional import conv_output_size
from .model import ModelConfig


@dataclass(frozen=True)
class Accounting:
    backbone_params: int
    head_params: int  # one attention head
    num_heads: int
    classifier_params: int
    center_params: int
    backbone_macs: int
    head_macs: int  # one attention head
    classifier_macs: int
    image_size: int

    @property
    def heads_params(self) -> int:
        return self.num_heads * self.head_params

    @property
    def total_params(self) -> int:
        return self.backbone_params + self.heads_params + self.classifier_params + self.center_params

    @property
    def baseline_params(self) -> int:
        """Plain backbone with a linear classifier on pooled features."""
        return self.backbone_params + self.classifier_params

    @property
    def total_macs(self) -> int:
        return self.backbone_macs + self.num_heads * self.head_macs + self.classifier_macs

    @property
    def baseline_macs(self) -> int:
        return self.backbone_macs + self.classifier_macs

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(
            heads_params=self.heads_params,
            total_params=self.total_params,
            baseline_params=self.baseline_params,
            total_macs=self.total_macs,
            baseline_macs=self.baseline_macs,
        )
        return d


def _conv(cin: int, cout: int, kh: int, kw: int, bias: bool) -> int:
    return cout * cin * kh * kw + (cout if bias else 0)


def backbone_counts(plan: BackbonePlan, size: int) -> tuple[int, int]:
    """(parameters, MACs) of the residual backbone for a square ``size`` input."""
    w0 = plan.widths[0]
    k, stride, pad = (7, 2, 3) if plan.stem == "imagenet" else (3, 1, 1)
    params = _conv(plan.in_channels, w0, k, k, False) + 2 * w0
    h = conv_output_size(size, k, pad, stride)
    macs = _conv(plan.in_channels, w0, k, k, False) * h * h
    if plan.stem == "imagenet":
        h = conv_output_size(h, 3, 1, 2)
    cin = w0
    for width, count, s in zip(plan.widths, plan.blocks, plan.strides):
        for b in range(count):
            st = s if b == 0 else 1
            h = conv_output_size(h, 3, 1, st)
            block = _conv(cin, width, 3, 3, False) + _conv(width, width, 3, 3, False)
            params += block + 4 * width
            macs += block * h * h
            if st != 1 or cin != width:
                params += _conv(cin, width, 1, 1, False) + 2 * width
                macs += _conv(cin, width, 1, 1, False) * h * h
            cin = width
    return params, macs


def head_counts(channels: int, feature_size: int, spatial_reduction: int = 2, channel_reduction: int = 4) -> tuple[int, int]:
    """(parameters, MACs) of one spatial+channel attention head."""
    mid = max(1, channels // spatial_reduction)
    convs = [(channels, mid, 1, 1), (mid, mid, 1, 3), (mid, mid, 3, 1), (mid, channels, 3, 3)]
    params = sum(_conv(*c, bias=True) for c in convs)
    macs = sum(_conv(*c, bias=False) for c in convs) * feature_size * feature_size
    r = max(1, channels // channel_reduction)
    params += channels * r + r + r * channels + channels
    macs += 2 * channels * r
    return params, macs


def count_params_flops(config: ModelConfig, image_size: int = 224) -> Accounting:
    plan = config.plan
    D = plan.feature_dim
    n = config.num_classes
    bb_params, bb_macs = backbone_counts(plan, image_size)
    h = image_size // plan.downsample
    hd_params, hd_macs = head_counts(D, h, config.spatial_reduction, config.channel_reduction)
    return Accounting(
        backbone_params=bb_params,
        head_params=hd_params,
        num_heads=config.num_heads,
        classifier_params=D * n + n,
        center_params=D * n,
        backbone_macs=bb_macs,
        head_macs=hd_macs,
        classifier_macs=D * n,
        image_size=image_size,
    )
