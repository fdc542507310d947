"""Group consistency preserving decoder and co-saliency head."""
from __future__ import annotations

import numpy as np

from . import ops
from .nn import Conv2d, ConvTranspose2d, Linear, Module, ModuleList
from .ops import ConfigError
from .tensor import Tensor


def group_vector(rows: Tensor) -> Tensor:
    """``N x C_d -> C_d``: per channel, softmax over images weights the sum.

    Invariant to the order of the rows (bit-exact, values are sorted first).
    """
    if rows.ndim != 2:
        raise ops.ShapeError(f"group_vector: expected N x C_d, got {rows.shape}")
    return ops.softmax_pool(rows, axis=0)


class FDUnit(Module):
    """Doubles resolution, halves channels, recalibrates with group statistics."""

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"fd_unit: C={channels} must be even")
        cd = channels // 2
        self.reduce = Conv2d(rng, channels, cd, 1)
        self.up = ConvTranspose2d(rng, cd, cd, 4, stride=2, padding=1)
        self.mlp1 = Linear(rng, 2 * cd, cd)
        self.mlp2 = Linear(rng, cd, cd, gain=1.0)

    def forward(self, feats: Tensor, return_state: bool = False):
        up = self.up(self.reduce(feats))
        pooled = ops.global_mean(up)
        y = group_vector(pooled)
        joint = ops.concat([pooled, ops.expand_batch(y, pooled.shape[0])], axis=-1)
        scale = ops.sigmoid(self.mlp2(ops.relu(self.mlp1(joint))))
        out = ops.mul_channels(up, scale)
        if return_state:
            return out, {"X_hat": up, "x_hat": pooled, "y": y}
        return out


class CoSaliencyHead(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(rng, channels, 1, 1, gain=1.0)

    def forward(self, feats: Tensor) -> Tensor:
        return ops.sigmoid(self.conv(feats))


class GCPD(Module):
    def __init__(self, channels: int, rng: np.random.Generator, units: int = 3):
        super().__init__()
        if channels % (2 ** units):
            raise ConfigError(f"gcpd: C={channels} must be divisible by {2 ** units}")
        self.units = ModuleList(FDUnit(channels // 2 ** i, rng) for i in range(units))

    def forward(self, feats: Tensor) -> Tensor:
        """``N x C x H x W -> N x C/8 x 8H x 8W``."""
        for unit in self.units:
            feats = unit(feats)
        return feats
