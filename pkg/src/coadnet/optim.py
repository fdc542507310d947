"""Adam with coupled L2 weight decay, and the step-halving learning-rate schedule."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter

DEFAULT_LR = 1e-4
DEFAULT_WEIGHT_DECAY = 5e-4


def adam_step(
    params: Iterable[Parameter],
    lr: float = DEFAULT_LR,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
) -> None:
    """One bias-corrected Adam update per parameter, then clear gradients.

    Weight decay is added to the gradient (``g + wd * p``) before the moment
    updates. Parameters whose ``grad`` is ``None`` take a zero gradient.
    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay:
            g = g + weight_decay * p.data
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        p.grad = None


def step_lr(iteration: int, lr0: float = DEFAULT_LR, halve_every: int = 500) -> float:
    """``lr0 * 2 ** -floor(iteration / halve_every)``."""
    return lr0 * 0.5 ** (iteration // halve_every)
