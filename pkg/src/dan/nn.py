"""Minimal layer containers: parameters, buffers and train/eval mode."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, parameter


class Module:
    """Holds parameters (``Tensor`` leaves), buffers (plain arrays) and children.

    Attribute definition order fixes the parameter order, which in turn fixes
    checkpoint layout and optimizer iteration order.
    """

    training: bool = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_") or name == "training":
                continue
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield f"{prefix}{name}", buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size,
        rng: np.random.Generator,
        stride: int = 1,
        padding=0,
        bias: bool = True,
        init: str = "kaiming",
    ):
        super().__init__()
        kh, kw = F._pair(kernel_size)
        self.stride = stride
        self.padding = F._pair(padding)
        fan_in = in_channels * kh * kw
        shape = (out_channels, in_channels, kh, kw)
        if init == "kaiming":
            w = kaiming_normal(rng, shape, fan_in)
        elif init == "uniform":
            w = uniform_fan_in(rng, shape, fan_in)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = parameter(w)
        self.bias = parameter(uniform_fan_in(rng, (out_channels,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, padding=self.padding, stride=self.stride)

    def macs(self, h_out: int, w_out: int) -> int:
        co, ci, kh, kw = self.weight.shape
        return co * ci * kh * kw * h_out * w_out


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = parameter(uniform_fan_in(rng, (out_features, in_features), in_features))
        self.bias = parameter(uniform_fan_in(rng, (out_features,), in_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.weight.size


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = F.BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.scale = parameter(np.ones(channels))
        self.shift = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.scale,
            self.shift,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

