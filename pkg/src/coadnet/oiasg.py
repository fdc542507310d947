"""Online intra-saliency guidance.

Each backbone feature ``F`` gets a learned saliency prior ``E`` from the
intra-saliency head and a CBAM-style spatial attention map; both gate
``F`` residually to give the intra-saliency feature ``U``.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .nn import Conv2d, Module
from .tensor import Tensor


class IntraSaliencyHead(Module):
    """3x3 conv C->C/4, relu, 1x1 conv -> 1 saliency logit per location."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        mid = max(1, channels // 4)
        self.conv1 = Conv2d(rng, channels, mid, 3, padding=1)
        self.conv2 = Conv2d(rng, mid, 1, 1, gain=1.0)

    def forward(self, feats: Tensor):
        """Return ``(E, logits)``.

        The prior is already at feature resolution, so the max-pool that
        produces ``E`` is the identity.
        """
        logits = self.conv2(ops.relu(self.conv1(feats)))
        return ops.sigmoid(logits), logits


class SpatialAttention(Module):
    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(rng, 2, 1, 3, padding=1, gain=1.0)

    def forward(self, feats: Tensor) -> Tensor:
        pooled = ops.concat_channels([ops.channel_mean(feats), ops.channel_max(feats)])
        return ops.sigmoid(self.conv(pooled))


class PriorFusion(Module):
    """``U = F + F * sigmoid(conv3x3([F_att; E]))``."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(rng, 2, 1, 3, padding=1, gain=1.0)

    def forward(self, feats: Tensor, attention: Tensor, prior: Tensor) -> Tensor:
        if attention.shape != prior.shape or attention.shape[-2:] != feats.shape[-2:]:
            raise ops.ShapeError(
                f"fuse_prior: attention {attention.shape} / prior {prior.shape} do not match features {feats.shape}"
            )
        gate = ops.sigmoid(self.conv(ops.concat_channels([attention, prior])))
        return feats + ops.mul_plane(feats, gate)


class OIaSG(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.iash = IntraSaliencyHead(channels, rng)
        self.attention = SpatialAttention(rng)
        self.fusion = PriorFusion(rng)

    def forward(self, feats: Tensor):
        """Return ``(U, E, logits)`` for a batch of backbone features."""
        prior, logits = self.iash(feats)
        att = self.attention(feats)
        return self.fusion(feats, att, prior), prior, logits

