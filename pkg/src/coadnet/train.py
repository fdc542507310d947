"""Joint co-saliency / saliency training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .model import forward_group, joint_loss
from .optim import adam_step, step_lr
from .tensor import backward, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    lr0: float = 1e-4
    halve_every: int = 500
    max_iters: int = 2000
    weight_decay: float = 5e-4
    seed: int = 0
    subgroups_per_iter: int = 2
    checkpoint_every: int = 0
    dtype: str = "float32"

    def lr(self, iteration: int) -> float:
        return step_lr(iteration, self.lr0, self.halve_every)


@dataclass
class TrainGroup:
    """Images and masks of one query group at model input size."""

    group_id: str
    images: np.ndarray  # N x 3 x S x S
    cosal: np.ndarray  # N x 1 x S x S
    sal: np.ndarray  # N x 1 x S x S


def as_train_groups(groups, input_size: Optional[int] = None) -> List[TrainGroup]:
    """Accept synthetic ``ImageGroup`` or disk ``LoadedGroup`` objects."""
    from .data import ImageGroup, LoadedGroup

    out = []
    for g in groups:
        if isinstance(g, TrainGroup):
            out.append(g)
        elif isinstance(g, ImageGroup):
            ims, c, s = g.tensors()
            out.append(TrainGroup(g.group_id, ims, c, s))
        elif isinstance(g, LoadedGroup):
            size = input_size or g.images.shape[-1]
            cosal = g.masks_at(size, "cosal")
            sal = g.masks_at(size, "sal") if g.sal_masks is not None else cosal
            out.append(TrainGroup(g.group_id, g.images, cosal, sal))
        else:
            raise TypeError(f"cannot train on {type(g).__name__}")
    return out


def make_subgroups(n_images: int, size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Split ``range(n_images)`` into consecutive chunks of ``size``.

    A short last chunk is topped up with images drawn at random from the
    whole group (with replacement).
    """
    if n_images < 1:
        raise ValueError("cannot split an empty group")
    chunks = []
    for start in range(0, n_images, size):
        idx = np.arange(start, min(start + size, n_images))
        if len(idx) < size:
            idx = np.concatenate([idx, rng.integers(0, n_images, size=size - len(idx))])
        chunks.append(idx)
    return chunks


def train(
    model,
    groups: Sequence,
    schedule: TrainSchedule,
    on_checkpoint: Optional[Callable[[int], None]] = None,
    log_every: int = 0,
) -> List[float]:
    """Optimize ``model`` in place; return the joint loss of every iteration."""
    data = as_train_groups(groups, model.config.backbone.input_size)
    if not data:
        raise ValueError("training set is empty")
    cfg = model.config
    dtype = np.dtype(schedule.dtype)
    model.astype(dtype)
    rng = np.random.default_rng(schedule.seed)
    subgroups: List[Tuple[int, np.ndarray]] = []
    for gi, g in enumerate(data):
        for idx in make_subgroups(len(g.images), cfg.group_size, rng):
            subgroups.append((gi, idx))
    pool = [(gi, n) for gi, g in enumerate(data) for n in range(len(g.images))]
    params = model.parameters()
    losses = []
    for it in range(schedule.max_iters):
        picks = rng.integers(0, len(subgroups), size=schedule.subgroups_per_iter)
        batch_ims, batch_masks = [], []
        for p in picks:
            gi, idx = subgroups[p]
            batch_ims.append(data[gi].images[idx].astype(dtype, copy=False))
            batch_masks.append(data[gi].cosal[idx])
        aux_ims = aux_masks = None
        if cfg.aux_batch:
            sel = rng.integers(0, len(pool), size=cfg.aux_batch)
            aux_ims = np.stack([data[pool[s][0]].images[pool[s][1]] for s in sel]).astype(dtype, copy=False)
            aux_masks = np.stack([data[pool[s][0]].sal[pool[s][1]] for s in sel]).astype(dtype, copy=False)
        maps, aux_maps = model.forward_batch(batch_ims, aux_ims)
        loss = joint_loss(
            ops.concat(maps, axis=0),
            np.concatenate(batch_masks).astype(dtype, copy=False),
            aux_maps,
            aux_masks,
            cfg.loss_alpha,
            cfg.loss_beta,
        )
        backward(loss)
        adam_step(params, lr=schedule.lr(it), weight_decay=schedule.weight_decay)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"loss became {value} at iteration {it}")
        losses.append(value)
        if log_every and (it % log_every == 0 or it == schedule.max_iters - 1):
            log.info("iter %d  loss %.5f  lr %.2e", it, value, schedule.lr(it))
        if on_checkpoint and schedule.checkpoint_every and (it + 1) % schedule.checkpoint_every == 0:
            on_checkpoint(it + 1)
    return losses


def predict(model, images: np.ndarray, group_size: Optional[int] = None) -> np.ndarray:
    """Co-saliency maps ``N x S x S`` for one query group of any size.

    The group is split into sub-groups like during training; each image's
    map comes from the first sub-group that contains it.
    """
    n = len(images)
    size = group_size or model.config.group_size
    rng = np.random.default_rng(0)
    out = np.empty((n,) + images.shape[-2:], dtype=np.float64)
    done = set()
    with no_grad():
        for idx in make_subgroups(n, size, rng):
            maps, _ = forward_group(model, images[idx])
            for j, i in enumerate(idx):
                if i not in done:
                    done.add(i)
                    out[i] = maps.data[j, 0]
    return out
