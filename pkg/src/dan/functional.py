"""Differentiable primitives built on :class:`dan.tensor.Tensor`.

Convolution uses a flattened window/matrix-product formulation. The direct
nested-loop definition lives in the test suite as the oracle it is checked
against.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

BN_EPS = 1e-5


class NonFiniteError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def conv_output_size(size: int, kernel: int, pad: int, stride: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    padding=(0, 0),
    stride: int = 1,
) -> Tensor:
    """2-D cross-correlation of ``x`` (B, C, H, W) with ``weight`` (C', C, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {weight.shape}")
    ph, pw = _pair(padding)
    if ph < 0 or pw < 0:
        raise ValueError(f"padding must be non-negative, got {(ph, pw)}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    B, C, H, W = x.shape
    Co, _, kh, kw = weight.shape
    Ho = conv_output_size(H, kh, ph, stride)
    Wo = conv_output_size(W, kw, pw, stride)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (Co,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({Co},)")

    # im2col in channels-last order: rows (b, i, j), columns (ki, kj, c)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    xp = xp.transpose(0, 2, 3, 1)
    padded_shape = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(Co, kh * kw * C)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2))

    def backward(g):
        gx = gw = gb = None
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Co)
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(Co, kh, kw, C).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(B, Ho, Wo, kh, kw, C)
            gxp = np.zeros(padded_shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += gcols[:, :, :, i, j, :]
            gx = gxp[:, ph : ph + H, pw : pw + W, :].transpose(0, 3, 1, 2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` (B, F) and ``weight`` (G, F)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
        out = out + bias
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing H x W plane: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    if H < 1 or W < 1:
        raise ShapeError(f"empty spatial plane in {x.shape}")
    scale = 1.0 / (H * W)

    def backward(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], (B, C, H, W)).copy(),)

    return Tensor._make(x.data.mean(axis=(2, 3)), (x,), backward, "gap")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum propagates NaN, so a bad input still reaches the loss guard
    return Tensor._make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return Tensor._make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization of (B, C, H, W) or (B, C) input.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In eval mode the running statistics are used.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    C = x.shape[1]
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"batch_norm parameters {scale.shape}/{shift.shape} do not match {C} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.ndim == 2 else (1, C, 1, 1)
    a = x.data
    gamma = scale.data.reshape(bshape)
    beta = shift.data.reshape(bshape)

    if not training:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (a - running_mean.reshape(bshape)) * inv
        out = gamma * xhat + beta

        def backward_eval(g):
            return (
                g * gamma * inv,
                (g * xhat).sum(axis=axes),
                g.sum(axis=axes),
            )

        return Tensor._make(out, (x, scale, shift), backward_eval, "batch_norm")

    if x.shape[0] < 2:
        raise ValueError(f"batch_norm in training mode needs batch size >= 2, got {x.shape[0]}")
    m = a.size // C
    mean = a.mean(axis=axes, keepdims=True)
    centered = a - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gamma * xhat + beta

    running_mean *= 1.0 - momentum
    running_mean += momentum * mean.reshape(C)
    running_var *= 1.0 - momentum
    running_var += momentum * var.reshape(C) * (m / (m - 1))

    def backward(g):
        gb = g.sum(axis=axes)
        gg = (g * xhat).sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True) - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, gg, gb

    return Tensor._make(out, (x, scale, shift), backward, "batch_norm")


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    Ho = conv_output_size(H, kernel, padding, stride)
    Wo = conv_output_size(W, kernel, padding, stride)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    flat = win.reshape(B, C, Ho, Wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape)
        di, dj = np.divmod(arg, kernel)
        rows = np.arange(Ho)[None, None, :, None] * stride + di
        cols = np.arange(Wo)[None, None, None, :] * stride + dj
        bi = np.arange(B)[:, None, None, None]
        ci = np.arange(C)[None, :, None, None]
        np.add.at(gxp, (bi, ci, rows, cols), g)
        return (gxp[:, :, padding : padding + H, padding : padding + W],)

    return Tensor._make(out, (x,), backward, "max_pool2d")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable ``x - logsumexp(x)`` along ``axis``."""
    a = x.data
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("log_softmax received non-finite input")
    shifted = a - a.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward, "log_softmax")


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-array softmax, used for scores at evaluation time."""
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def check_labels(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise ValueError(f"label {labels[bad[0]]} at position {bad[0]} outside [0, {num_classes})")
    return labels


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, classes) logits, got {logits.shape}")
    B, n = logits.shape
    labels = check_labels(labels, n)
    if labels.shape[0] != B:
        raise ShapeError(f"{labels.shape[0]} labels for a batch of {B}")
    onehot = np.zeros((B, n))
    onehot[np.arange(B), labels] = 1.0
    return -(log_softmax(logits, axis=1) * onehot).sum() * (1.0 / B)


def population_var(x: Tensor, axis: int) -> Tensor:
    """Divide-by-n variance along ``axis`` (axis removed)."""
    centered = x - x.mean(axis=axis, keepdims=True)
    return (centered * centered).mean(axis=axis)

