"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .afn import LossWeights
from .fcn import BackbonePlan
from .model import ModelConfig, build_model
from .tensor import Tensor


def numerical_grad(f: Callable[[], float], arr: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


@dataclass
class GradCheck:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


def check(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[tuple[str, Tensor]],
    step: float = 1e-4,
    tolerance: float = 1e-4,
) -> list[GradCheck]:
    """Compare backprop gradients of ``loss_fn()`` with central differences for every tensor."""
    for _, t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    results = []
    for name, t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numerical_grad(lambda: loss_fn().item(), t.data, step)
        results.append(GradCheck(name, relative_error(analytic, numeric), tolerance))
    return results


def tiny_model_config(num_heads: int = 2, num_classes: int = 3) -> ModelConfig:
    plan = BackbonePlan(widths=(2, 4, 4, 6), blocks=(1, 1, 1, 1), strides=(1, 2, 1, 2))
    return ModelConfig(plan=plan, num_heads=num_heads, num_classes=num_classes)


def check_dan_loss(seed: int = 0, image_size: int = 8, weights: LossWeights = LossWeights()) -> list[GradCheck]:
    """Gradient check of the joint objective for every parameter of a tiny model on a 2-image batch."""
    rng = np.random.default_rng(seed)
    model = build_model(tiny_model_config(), seed)
    images = Tensor(rng.uniform(-1.0, 1.0, size=(2, 3, image_size, image_size)))
    labels = np.array([0, 2])
    # frozen running stats: batch-norm buffers must not drift between evaluations
    buffers = [(b, b.copy()) for _, b in model.named_buffers()]

    def loss_fn() -> Tensor:
        for buf, saved in buffers:
            buf[...] = saved
        fwd = model(images)
        return model.losses(fwd, labels, weights).total

    return check(loss_fn, list(model.named_parameters()))


def _probe(rng: np.random.Generator, op: Callable[..., Tensor], *inputs: np.ndarray):
    """Scalar loss ``sum(op(*xs) * R)`` with a fixed random projection ``R``."""
    xs = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    proj = None

    def loss_fn() -> Tensor:
        nonlocal proj
        out = op(*xs)
        if proj is None:
            proj = rng.normal(size=out.shape)
        return (out * Tensor(proj)).sum()

    return loss_fn, [(f"x{i}", x) for i, x in enumerate(xs)]


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple]:
    """Small seeded inputs for every differentiable primitive.

    Inputs that pass through kinks (relu, max-pool, floors) are kept away from
    them so central differences stay on one side.
    """
    from . import afn, fcn
    from . import functional as F
    from .tensor import maximum_floor, stack

    def away_from_zero(shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 0.05, 0.1 * np.sign(x) + 0.05, x)

    def n(*shape):
        return rng.normal(size=shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, size=shape)

    labels = np.array([0, 2, 1, 2])
    return {
        "add": (lambda a, b: a + b, n(3, 4), n(4)),
        "sub": (lambda a, b: a - b, n(3, 1), n(3, 4)),
        "mul": (lambda a, b: a * b, n(2, 3, 4), n(3, 1)),
        "div": (lambda a, b: a / b, n(3, 4), pos(3, 4)),
        "pow": (lambda a: a**3.0, n(3, 4)),
        "neg": (lambda a: -a, n(5)),
        "matmul": (lambda a, b: a @ b, n(3, 5), n(5, 2)),
        "getitem": (lambda a: a[np.array([0, 2, 2])], n(4, 3)),
        "sum": (lambda a: a.sum(axis=1, keepdims=True), n(3, 4, 2)),
        "mean": (lambda a: a.mean(axis=(0, 2)), n(3, 4, 2)),
        "reshape": (lambda a: a.reshape(4, 6), n(2, 3, 4)),
        "transpose": (lambda a: a.transpose(2, 0, 1), n(2, 3, 4)),
        "exp": (lambda a: a.exp(), n(3, 4)),
        "log": (lambda a: a.log(), pos(3, 4)),
        "sqrt": (lambda a: a.sqrt(), pos(3, 4)),
        "stack": (lambda a, b: stack([a, b], axis=1), n(3, 4), n(3, 4)),
        "maximum_floor": (lambda a: maximum_floor(a, 0.0), away_from_zero((3, 4))),
        "conv2d": (lambda x, w, b: F.conv2d(x, w, b, padding=(1, 1), stride=1), n(2, 3, 5, 5), n(4, 3, 3, 3), n(4)),
        "conv2d_strided": (lambda x, w: F.conv2d(x, w, None, padding=(0, 1), stride=2), n(2, 2, 6, 5), n(3, 2, 1, 3)),
        "linear": (lambda x, w, b: F.linear(x, w, b), n(4, 5), n(3, 5), n(3)),
        "global_avg_pool": (F.global_avg_pool, n(2, 3, 4, 4)),
        "relu": (F.relu, away_from_zero((3, 4))),
        "sigmoid": (F.sigmoid, n(3, 4)),
        "batch_norm": (
            lambda x, s, b: F.batch_norm(x, s, b, np.zeros(3), np.ones(3), training=True),
            n(4, 3, 2, 2),
            pos(3),
            n(3),
        ),
        "max_pool2d": (lambda x: F.max_pool2d(x, 3, 2, 1), n(2, 2, 6, 6)),
        "log_softmax": (lambda x: F.log_softmax(x, axis=1), n(3, 4, 2)),
        "cross_entropy": (lambda z: F.cross_entropy(z, labels), n(4, 3)),
        "population_var": (lambda x: F.population_var(x, axis=1), n(3, 4, 2)),
        "affinity_loss": (lambda f, c: fcn.affinity_loss(f, labels, c), n(4, 5), n(5, 3)),
        "scale_features": (afn.scale_features, n(2, 4, 3)),
        "partition_loss": (lambda a: afn.partition_loss(afn.scale_features(a)), n(2, 4, 3)),
    }


def check_primitives(seed: int = 0, tolerance: float = 1e-4) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (op, *inputs) in primitive_cases(rng).items():
        loss_fn, tensors = _probe(rng, op, *inputs)
        for r in check(loss_fn, tensors, tolerance=tolerance):
            results.append(GradCheck(f"{name}.{r.name}", r.error, r.tolerance))
    return results


def run_all(seed: int = 0, tolerance: float = 1e-4) -> list[GradCheck]:
    """Every primitive plus the joint objective of a tiny model."""
    results = check_primitives(seed, tolerance)
    for r in check_dan_loss(seed):
        results.append(GradCheck(f"dan_loss.{r.name}", r.error, tolerance))
    return results
