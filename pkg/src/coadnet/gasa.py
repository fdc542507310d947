"""Group-attentional semantic aggregation.

The ``N`` intra-saliency features are split into ``B`` channel blocks;
the ``b``-th blocks of all images are reduced to one order-insensitive
block by a softmax-weighted sum over images, refined by multi-dilation
local context and spatial self-attention (own weights per block), and
fused back to ``C`` channels.
"""
from __future__ import annotations

from typing import List

import numpy as np

from . import ops
from .nn import Conv2d, Module, ModuleList
from .ops import ConfigError
from .tensor import Tensor

DILATIONS = (1, 3, 5, 7)


def block_shuffle(feats: Tensor, blocks: int) -> List[Tensor]:
    """Regroup ``N x C x H x W`` features into ``B`` tensors of ``N x D x H x W``.

    Entry ``b`` holds channels ``[b*D, (b+1)*D)`` of every image.
    """
    c = feats.shape[-3]
    if blocks < 1 or c % blocks:
        raise ConfigError(f"block_shuffle: B={blocks} does not divide C={c}")
    d = c // blocks
    return [ops.slice_axis(feats, -3, b * d, (b + 1) * d) for b in range(blocks)]


def aggregate_block(members: Tensor) -> Tensor:
    """``N x D x H x W -> D x H x W``: per element, softmax over images weights the sum."""
    if members.ndim != 4:
        raise ops.ShapeError(f"aggregate_block: expected N x D x H x W, got {members.shape}")
    return ops.softmax_pool(members, axis=0)


class LocalContext(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        if d % 4:
            raise ConfigError(f"local_context: block width D={d} is not divisible by 4")
        self.branches = ModuleList(Conv2d(rng, d, d // 4, 3, padding=k, dilation=k) for k in DILATIONS)
        self.fuse = Conv2d(rng, d, d, 1, gain=1.0)

    def forward(self, g: Tensor) -> Tensor:
        return self.fuse(ops.concat_channels([br(g) for br in self.branches]))


class GlobalAttention(Module):
    def __init__(self, d: int, rng: np.random.Generator):
        super().__init__()
        self.query = Conv2d(rng, d, d, 1, gain=1.0)
        self.key = Conv2d(rng, d, d, 1, gain=1.0)
        self.value = Conv2d(rng, d, d, 1, gain=1.0)

    def affinity(self, g: Tensor) -> Tensor:
        """``HW x HW`` attention; column ``j`` is query position ``j``, softmax over keys."""
        d, h, w = g.shape
        q = ops.reshape(self.query(g), (d, h * w))
        k = ops.reshape(self.key(g), (d, h * w))
        scores = ops.mul(ops.matmul(ops.transpose2d(k), q), 1.0 / np.sqrt(d))
        return ops.softmax(scores, axis=0)

    def forward(self, g: Tensor) -> Tensor:
        d, h, w = g.shape
        v = ops.reshape(self.value(g), (d, h * w))
        attended = ops.reshape(ops.matmul(v, self.affinity(g)), (d, h, w))
        return attended + g


class GASA(Module):
    def __init__(self, channels: int, blocks: int, rng: np.random.Generator):
        super().__init__()
        if blocks < 1 or channels % blocks:
            raise ConfigError(f"gasa: B={blocks} does not divide C={channels}")
        self.blocks = blocks
        d = channels // blocks
        self.local = ModuleList(LocalContext(d, rng) for _ in range(blocks))
        self.attn = ModuleList(GlobalAttention(d, rng) for _ in range(blocks))
        self.fuse = Conv2d(rng, channels, channels, 1, gain=1.0)

    def block_outputs(self, feats: Tensor) -> List[Tensor]:
        out = []
        for b, members in enumerate(block_shuffle(feats, self.blocks)):
            g = aggregate_block(members)
            out.append(self.attn[b](self.local[b](g)))
        return out

    def forward(self, feats: Tensor) -> Tensor:
        """``N x C x H x W`` intra-saliency features -> ``C x H x W`` group semantics."""
        return self.fuse(ops.concat_channels(self.block_outputs(feats)))
