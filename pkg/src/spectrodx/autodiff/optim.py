from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor carrying its own Adam moment buffers."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, dtype=None, name: str | None = None):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter(name={self.name}, shape={self.shape}, dtype={self.dtype})"


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or Inf; the optimizer step was not applied."""


@dataclass
class AdamConfig:
    learning_rate: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def adam_step(params: Iterable[Parameter], cfg: AdamConfig):
    """One bias-corrected Adam update on every parameter with a gradient; grads are cleared after.

    All gradients are validated before any parameter moves, so a NaN aborts the
    whole step rather than leaving the model half-updated.
    """
    params = list(params)
    bad = [p.name or f"#{i}" for i, p in enumerate(params)
           if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in parameter(s): {', '.join(bad)}")
    b1, b2 = cfg.beta1, cfg.beta2
    for p in params:
        if p.grad is None:
            continue
        g = p.grad.astype(p.dtype, copy=False)
        p.step_count += 1
        t = p.step_count
        p.adam_m *= b1
        p.adam_m += (1 - b1) * g
        p.adam_v *= b2
        p.adam_v += (1 - b2) * g * g
        m_hat = p.adam_m / (1 - b1**t)
        v_hat = p.adam_v / (1 - b2**t)
        p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)).astype(p.dtype)
        p.grad = None


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.grad = None
