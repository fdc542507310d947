"""Gated group distribution.

A shared estimator looks at each image's feature next to the group
semantics and emits a per-element probability ``P``; the co-saliency
feature is the convex mix ``P * G + (1 - P) * U``.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .ops import ConfigError
from .tensor import Tensor, make_result

SE_REDUCTION = 4


class SqueezeExcitation(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = SE_REDUCTION):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"se_block: reduction {reduction} does not divide C={channels}")
        self.fc1 = Linear(rng, channels, channels // reduction)
        self.fc2 = Linear(rng, channels // reduction, channels, gain=1.0)

    def scale(self, x: Tensor) -> Tensor:
        """Per-channel excitation in (0, 1), shape ``[N,]C``."""
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(ops.global_mean(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return ops.mul_channels(x, self.scale(x))


class Bottleneck(Module):
    """1x1 C->C/4, relu, 1x1 C/4->C."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        mid = max(1, channels // 4)
        self.reduce = Conv2d(rng, channels, mid, 1)
        self.expand = Conv2d(rng, mid, channels, 1, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        return self.expand(ops.relu(self.reduce(x)))


def gated_combine(p: Tensor, g: Tensor, u: Tensor) -> Tensor:
    """Elementwise ``p * g + (1 - p) * u``.

    The result is clamped to ``[min(g, u), max(g, u)]``; mathematically a
    no-op for ``p`` in [0, 1], it removes last-bit rounding overshoot.
    """
    if not (p.shape == g.shape == u.shape):
        raise ops.ShapeError(f"gated_combine: shapes {p.shape}, {g.shape}, {u.shape} differ")
    pd, gd, ud = p.data, g.data, u.data
    x = pd * gd + (1 - pd) * ud
    x = np.clip(x, np.minimum(gd, ud), np.maximum(gd, ud))

    def bw(grad):
        return grad * (gd - ud), grad * pd, grad * (1 - pd)

    return make_result(x, (p, g, u), bw, "gated_combine")


class GGD(Module):
    """Shared by every image of the group."""

    def __init__(self, channels: int, rng: np.random.Generator, se_reduction: int = SE_REDUCTION):
        super().__init__()
        self.reduce = Conv2d(rng, 2 * channels, channels, 1, gain=1.0)
        self.se = SqueezeExcitation(channels, rng, se_reduction)
        self.bottleneck = Bottleneck(channels, rng)

    def gate_probability(self, feats: Tensor, group: Tensor):
        """Return ``(P, U_g)`` for ``N x C x H x W`` features and ``C x H x W`` semantics."""
        if feats.shape[1:] != group.shape:
            raise ops.ShapeError(f"ggd: features {feats.shape} do not match group semantics {group.shape}")
        g = ops.expand_batch(group, feats.shape[0])
        fused = self.reduce(ops.concat_channels([feats, g]))
        prob = ops.sigmoid(self.bottleneck(self.se(fused)))
        return prob, fused

    def forward(self, feats: Tensor, group: Tensor) -> Tensor:
        prob, _ = self.gate_probability(feats, group)
        return gated_combine(prob, ops.expand_batch(group, feats.shape[0]), feats)
