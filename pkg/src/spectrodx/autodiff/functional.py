"""Composite differentiable ops built from the primitives."""
from __future__ import annotations

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    constant,
    exp,
    log,
    matmul,
    mul,
    reshape,
    sigmoid,
    sum_,
    tanh,
    transpose,
)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def relu(x: Tensor) -> Tensor:
    return mul(x, constant(x.data > 0, like=x))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {alpha}")
    return mul(x, constant(np.where(x.data > 0, 1.0, alpha), like=x))


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("linear", None):
        return x
    raise ValueError(f"unknown activation {kind!r}")


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x) computed as max(x, 0) + log(1 + e^-|x|).

    Both pieces take the x >= 0 branch at exactly zero; mixing branches there would
    drop the 1/2 derivative (a relu mask of x > 0 with sign(0) = 0 gives slope 0).
    """
    pos = x.data >= 0
    absx = mul(x, constant(np.where(pos, 1.0, -1.0), like=x))
    return add(mul(x, constant(pos, like=x)), log(add(exp(mul(absx, -1.0)), 1.0)))


def log_softmax(logits: Tensor) -> Tensor:
    shift = constant(logits.data.max(axis=1, keepdims=True), like=logits)
    z = logits - shift
    return z - log(sum_(exp(z), axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if c < 2:
        raise DimensionError(f"softmax_cross_entropy needs at least 2 classes, got {c}")
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"label out of range for {c} classes: {labels}")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return mul(sum_(mul(log_softmax(logits), constant(onehot))), -1.0 / n)


def bce_with_logits_sum(logits: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """Per-sample binary cross-entropy summed over all non-batch axes, shape (N,)."""
    t = target if isinstance(target, Tensor) else constant(target, like=logits)
    per_pixel = softplus(logits) - mul(logits, t)
    axes = tuple(range(1, logits.ndim))
    return sum_(per_pixel, axes)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over NHWC; spatial dims must divide by ``size``."""
    n, h, w, c = x.shape
    if h % size or w % size:
        raise DimensionError(f"max_pool2d: spatial dims {h}x{w} not divisible by {size}")
    oh, ow = h // size, w // size
    blocks = transpose(reshape(x, (n, oh, size, ow, size, c)), (0, 1, 3, 5, 2, 4))
    blocks = reshape(blocks, (n, oh, ow, c, size * size))
    arg = blocks.data.argmax(axis=-1)
    mask = np.zeros(blocks.shape, dtype=x.dtype)
    np.put_along_axis(mask, arg[..., None], 1.0, axis=-1)
    return sum_(mul(blocks, constant(mask)), axis=-1)


def upsample_nearest(x: Tensor, factor=(2, 2)) -> Tensor:
    n, h, w, c = x.shape
    fh, fw = factor
    expanded = mul(reshape(x, (n, h, 1, w, 1, c)), constant(np.ones((1, 1, fh, 1, fw, 1)), like=x))
    return reshape(expanded, (n, h * fh, w * fw, c))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = rng.random(x.shape) >= rate
    return mul(x, constant(keep / (1.0 - rate), like=x))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Training-mode batch norm over all axes but the last; returns output and batch moments."""
    axes = tuple(range(x.ndim - 1))
    count = int(np.prod([x.shape[a] for a in axes]))
    if x.shape[0] < 2:
        raise DimensionError("batch_norm in train mode needs a batch of at least 2")
    mu = mul(sum_(x, axes, keepdims=True), 1.0 / count)
    centered = x - mu
    var = mul(sum_(mul(centered, centered), axes, keepdims=True), 1.0 / count)
    inv = (var + eps) ** -0.5
    out = add(mul(mul(centered, inv), gamma), beta)
    return out, mu.data.reshape(-1), var.data.reshape(-1)


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                    running_var: np.ndarray, eps: float = 1e-5) -> Tensor:
    scale = constant(1.0 / np.sqrt(running_var + eps), like=x)
    centered = x - constant(running_mean, like=x)
    return add(mul(mul(centered, scale), gamma), beta)
