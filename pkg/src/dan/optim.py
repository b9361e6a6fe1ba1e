"""SGD with momentum, Adam, and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimConfig:
    name: str = "adam"  # "sgd" | "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "cosine"  # "cosine" | "constant"
    final_lr_fraction: float = 0.01

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    @classmethod
    def sgd(cls, lr: float = 0.1, **kw) -> "OptimConfig":
        return cls(name="sgd", lr=lr, **kw)

    @classmethod
    def adam(cls, lr: float = 1e-4, **kw) -> "OptimConfig":
        return cls(name="adam", lr=lr, **kw)


def learning_rate(config: OptimConfig, step: int, total_steps: int) -> float:
    if config.schedule == "constant" or total_steps <= 1:
        return config.lr
    progress = min(step, total_steps - 1) / (total_steps - 1)
    floor = config.final_lr_fraction
    return config.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress)))


def optimizer_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    state: dict,
    config: OptimConfig,
    lr: Optional[float] = None,
) -> None:
    """Update ``params`` in place. ``state`` holds per-parameter slots keyed by index.

    Parameters whose gradient is None are left untouched (and their slots are
    not advanced).
    """
    lr = config.lr if lr is None else lr
    if config.name == "sgd":
        for i, (p, g) in enumerate(zip(params, grads)):
            if g is None:
                continue
            if config.momentum:
                buf = state.get(("momentum", i))
                buf = g.copy() if buf is None else config.momentum * buf + g
                state[("momentum", i)] = buf
                p -= lr * buf
            else:
                p -= lr * g
        return

    t = state.get("step", 0) + 1
    state["step"] = t
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m = state.get(("m", i))
        v = state.get(("v", i))
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state[("m", i)] = m
        state[("v", i)] = v
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


class Optimizer:
    """Binds :func:`optimizer_step` to a model's named parameters."""

    def __init__(self, named_params: Sequence[tuple[str, Tensor]], config: OptimConfig):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.config = config
        self.state: dict = {}

    def step(self, lr: Optional[float] = None) -> None:
        optimizer_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.config, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of the optimizer state, for checkpoints."""
        out = {}
        if "step" in self.state:
            out["step"] = np.array(float(self.state["step"]))
        slots = sorted((k for k in self.state if k != "step"), key=lambda k: (k[1], k[0]))
        for slot, i in slots:
            out[f"{slot}/{self.names[i]}"] = self.state[(slot, i)]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        index = {n: i for i, n in enumerate(self.names)}
        self.state = {}
        for key, value in arrays.items():
            if key == "step":
                self.state["step"] = int(value)
                continue
            slot, name = key.split("/", 1)
            if name not in index:
                raise KeyError(f"optimizer state for unknown parameter {name}")
            self.state[(slot, index[name])] = np.array(value, dtype=np.float64)
