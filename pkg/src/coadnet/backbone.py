"""Shared /8 feature extractor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Module, ModuleList
from .ops import ConfigError
from .tensor import Tensor

STAGE_STRIDES = (2, 2, 2)


@dataclass
class BackboneConfig:
    input_size: int = 64
    stem_channels: int = 16
    out_channels: int = 64

    def __post_init__(self):
        if self.input_size < 8 or self.input_size % 8:
            raise ConfigError(f"backbone.input_size={self.input_size} must be a positive multiple of 8")
        if self.stem_channels < 1:
            raise ConfigError(f"backbone.stem_channels={self.stem_channels} must be positive")
        if self.out_channels < 8 or self.out_channels % 8:
            raise ConfigError(f"backbone.channels={self.out_channels} must be divisible by 8")

    @property
    def feature_size(self) -> int:
        return self.input_size // 8

    def stage_channels(self):
        """Channel width after each stage, doubling toward ``out_channels``."""
        c = self.out_channels
        return [max(self.stem_channels, c // 4), max(self.stem_channels, c // 2), c]


class Backbone(Module):
    """Three ``conv3x3 -> relu -> conv4x4/s2 -> relu`` stages.

    The downsampling conv is 4x4 with padding 1 so an even extent halves
    exactly.
    """

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.stages = ModuleList()
        cin = 3
        for cout in config.stage_channels():
            stage = Module()
            stage.conv = Conv2d(rng, cin, cout, 3, padding=1)
            stage.down = Conv2d(rng, cout, cout, 4, stride=2, padding=1)
            self.stages.append(stage)
            cin = cout

    def forward(self, images: Tensor) -> Tensor:
        s = images.shape[-1]
        if images.shape[-2] != s or s % 8:
            raise ConfigError(f"backbone input must be square with side divisible by 8, got {images.shape[-2:]}")
        x = images
        for stage in self.stages:
            x = ops.relu(stage.conv(x))
            x = ops.relu(stage.down(x))
        return x
