"""Full network assembly, ablation baselines, and the joint objective."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .backbone import Backbone, BackboneConfig
from .gasa import GASA
from .gcpd import GCPD, CoSaliencyHead
from .ggd import GGD, SE_REDUCTION
from .nn import Conv2d, ConvTranspose2d, Module, ModuleList
from .oiasg import OIaSG, IntraSaliencyHead
from .ops import ConfigError, ShapeError
from .tensor import Tensor

CLAMP_EPS = 1e-7


@dataclass
class AblationFlags:
    use_oiasg: bool = True
    use_gasa: bool = True
    use_ggd: bool = True
    use_gcpd: bool = True

    @classmethod
    def baseline(cls) -> "AblationFlags":
        return cls(False, False, False, False)

    @classmethod
    def ladder(cls) -> List[Tuple[str, "AblationFlags"]]:
        """Baseline, then the four modules added one at a time."""
        return [
            ("baseline", cls(False, False, False, False)),
            ("+OIaSG", cls(True, False, False, False)),
            ("+GASA", cls(True, True, False, False)),
            ("+GGD", cls(True, True, True, False)),
            ("+GCPD", cls(True, True, True, True)),
        ]

    def label(self) -> str:
        names = [n for n, on in zip(("oiasg", "gasa", "ggd", "gcpd"),
                                    (self.use_oiasg, self.use_gasa, self.use_ggd, self.use_gcpd)) if on]
        return "+".join(names) if names else "baseline"


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    group_size: int = 5
    blocks: int = 8
    ablation: AblationFlags = field(default_factory=AblationFlags)
    loss_alpha: float = 0.7
    loss_beta: float = 0.3
    aux_batch: int = 8
    se_reduction: int = SE_REDUCTION
    seed: int = 0

    def __post_init__(self):
        c = self.backbone.out_channels
        if self.loss_alpha <= 0 or self.loss_beta <= 0:
            raise ConfigError("loss weights alpha and beta must be positive")
        if self.group_size < 1:
            raise ConfigError(f"group_size must be >= 1, got {self.group_size}")
        if self.blocks < 1 or c % self.blocks or (c // self.blocks) % 4:
            raise ConfigError(f"gasa.blocks={self.blocks} must divide C={c} into blocks of a multiple of 4 channels")
        if c % self.se_reduction:
            raise ConfigError(f"se reduction {self.se_reduction} does not divide C={c}")


PRESETS = {
    "tiny": dict(input_size=32, stem_channels=8, out_channels=16, blocks=4),
    "small": dict(input_size=64, stem_channels=8, out_channels=32, blocks=4),
    "default": dict(input_size=64, stem_channels=16, out_channels=64, blocks=8),
}


def preset(name: str, **overrides) -> ModelConfig:
    p = dict(PRESETS[name])
    bb = BackboneConfig(p.pop("input_size"), p.pop("stem_channels"), p.pop("out_channels"))
    p.update(overrides)
    return ModelConfig(backbone=bb, **p)


# ------------------------------------------------------------ baselines


class ConcatConvAggregator(Module):
    """Stand-in for GASA: plain 3x3 convolutions over the image-concatenated features."""

    def __init__(self, channels: int, group_size: int, rng, width: Optional[int] = None):
        super().__init__()
        self.group_size = group_size
        width = width or max(2, channels // 16)
        self.conv1 = Conv2d(rng, group_size * channels, width, 3, padding=1)
        self.conv2 = Conv2d(rng, width, channels, 3, padding=1, gain=1.0)

    def forward(self, feats: Tensor) -> Tensor:
        n, c, h, w = feats.shape
        if n != self.group_size:
            raise ShapeError(f"baseline aggregator was built for groups of {self.group_size}, got {n}")
        stacked = ops.reshape(feats, (n * c, h, w))
        return self.conv2(ops.relu(self.conv1(stacked)))


class ConcatDistributor(Module):
    """Stand-in for GGD: concatenate ``[U; G]`` and apply a 1x1 convolution."""

    def __init__(self, channels: int, rng):
        super().__init__()
        self.conv = Conv2d(rng, 2 * channels, channels, 1)

    def forward(self, feats: Tensor, group: Tensor) -> Tensor:
        g = ops.expand_batch(group, feats.shape[0])
        return self.conv(ops.concat_channels([feats, g]))


class DeconvDecoder(Module):
    """Stand-in for GCPD: three cascaded 2x deconvolutions, channels halved each time."""

    def __init__(self, channels: int, rng):
        super().__init__()
        self.layers = ModuleList(
            ConvTranspose2d(rng, channels // 2 ** i, channels // 2 ** (i + 1), 4, stride=2, padding=1)
            for i in range(3)
        )

    def forward(self, feats: Tensor) -> Tensor:
        for layer in self.layers:
            feats = ops.relu(layer(feats))
        return feats


# ---------------------------------------------------------------- network


class CoADNet(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.backbone.out_channels
        flags = config.ablation
        self.backbone = Backbone(config.backbone, rng)
        if flags.use_oiasg:
            self.oiasg = OIaSG(c, rng)
        else:
            # the saliency head still feeds the auxiliary branch
            self.iash = IntraSaliencyHead(c, rng)
        self.gasa = GASA(c, config.blocks, rng) if flags.use_gasa else ConcatConvAggregator(c, config.group_size, rng)
        self.ggd = GGD(c, rng, config.se_reduction) if flags.use_ggd else ConcatDistributor(c, rng)
        self.gcpd = GCPD(c, rng) if flags.use_gcpd else DeconvDecoder(c, rng)
        self.cosh = CoSaliencyHead(c // 8, rng)
        self.assign_names()

    # -- pieces ------------------------------------------------------------
    def saliency_head(self) -> IntraSaliencyHead:
        return self.oiasg.iash if self.config.ablation.use_oiasg else self.iash

    def intra_saliency(self, feats: Tensor):
        """Backbone features -> ``(U, E, logits)``; ``U = F`` when OIaSG is off."""
        if self.config.ablation.use_oiasg:
            return self.oiasg(feats)
        prior, logits = self.iash(feats)
        return feats, prior, logits

    def group_branch(self, feats: Tensor, return_features: bool = False):
        """Backbone features of one group -> ``(M, E)`` (plus ``U``, ``X`` if asked)."""
        u, prior, _ = self.intra_saliency(feats)
        g = self.gasa(u)
        x = self.ggd(u, g)
        maps = self.cosh(self.gcpd(x))
        if return_features:
            return maps, prior, u, x
        return maps, prior

    def auxiliary_maps(self, feats: Tensor) -> Tensor:
        """Single-image saliency at input resolution from the head's logits."""
        _, logits = self.saliency_head()(feats)
        s = feats.shape[-1] * 8
        return ops.sigmoid(ops.bilinear_resize(logits, s, s))

    # -- entry points --------------------------------------------------------
    def forward(self, images) -> Tuple[Tensor, Tensor]:
        return forward_group(self, images)

    def forward_batch(self, groups: Sequence[np.ndarray], aux: Optional[np.ndarray] = None):
        """One backbone pass over several groups plus auxiliary images.

        Returns ``(maps per group, aux maps or None)``.
        """
        parts = [np.asarray(g) for g in groups]
        if aux is not None and len(aux):
            parts.append(np.asarray(aux))
        sizes = [len(p) for p in parts]
        dtype = self.backbone.stages[0].conv.weight.dtype
        feats = self.backbone(Tensor(np.concatenate(parts).astype(dtype, copy=False)))
        out, start = [], 0
        for n in sizes[: len(groups)]:
            out.append(self.group_branch(ops.slice_axis(feats, 0, start, start + n))[0])
            start += n
        aux_maps = None
        if aux is not None and len(aux):
            aux_maps = self.auxiliary_maps(ops.slice_axis(feats, 0, start, start + sizes[-1]))
        return out, aux_maps


def _as_batch(images) -> np.ndarray:
    if isinstance(images, Tensor):
        return images.data
    if isinstance(images, np.ndarray):
        return images
    arrs = [im.data if isinstance(im, Tensor) else np.asarray(im) for im in images]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ShapeError(f"all images of a group must share one size, got {sorted(shapes)}")
    return np.stack(arrs)


def forward_group(model: CoADNet, images, return_features: bool = False):
    """Co-saliency maps ``M`` (``N x 1 x S x S``) and priors ``E`` (``N x 1 x H x W``)."""
    batch = _as_batch(images)
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeError(f"expected N x 3 x S x S images, got {batch.shape}")
    s = batch.shape[-1]
    if batch.shape[-2] != s or s % 8:
        raise ConfigError(f"images must be square with side divisible by 8, got {batch.shape[-2:]}")
    dtype = model.backbone.stages[0].conv.weight.dtype
    x = images if isinstance(images, Tensor) else Tensor(batch.astype(dtype, copy=False))
    return model.group_branch(model.backbone(x), return_features)


def joint_loss(
    cosal_maps: Tensor,
    cosal_masks,
    aux_maps: Optional[Tensor],
    aux_masks,
    alpha: float = 0.7,
    beta: float = 0.3,
) -> Tensor:
    """``alpha * L_c + beta * L_s`` with clamped binary cross-entropy.

    Every image has the same extent, so the mean of per-image mean BCEs is
    the global mean. The auxiliary term is dropped when there are no
    auxiliary samples.
    """
    l_c = ops.bce(cosal_maps, cosal_masks, CLAMP_EPS)
    l_s = None
    if aux_maps is not None and aux_maps.size:
        l_s = ops.bce(aux_maps, aux_masks, CLAMP_EPS)
    return weighted_objective(l_c, l_s, alpha, beta)


def weighted_objective(l_c, l_s, alpha: float = 0.7, beta: float = 0.3):
    """``alpha * l_c + beta * l_s``; ``l_s`` may be ``None``. Accepts tensors or floats."""
    if not isinstance(l_c, Tensor):
        return alpha * l_c + (beta * l_s if l_s is not None else 0.0)
    loss = ops.mul(l_c, alpha)
    if l_s is not None:
        loss = loss + ops.mul(l_s, beta)
    return loss


def parameter_census(model: Module) -> dict:
    """Parameter count per top-level submodule, plus ``total``."""
    out = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        out[top] = out.get(top, 0) + p.size
    out["total"] = sum(out.values())
    return out
