"""Synthetic co-saliency groups and on-disk image-group I/O.

Every group repeats one target shape category (in one colour family) in
all of its images; distractor shapes of other categories show up in only
some of them. The co-saliency mask covers the target only, the saliency
mask covers target and distractors.

On disk a dataset is a directory of groups::

    root/manifest.txt           one group path per line (relative to root)
    root/<group>/<image>.png    RGB image
    root/<group>/<image>_gt.png co-saliency mask
    root/<group>/<image>_sal.png  saliency mask (optional)
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .ops import ConfigError, bilinear_matrix

CATEGORIES = ("disc", "square", "triangle", "ring", "cross")
IMAGE_EXTS = (".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp")
MANIFEST = "manifest.txt"


class DataError(OSError):
    """A dataset file is missing or unreadable."""


@dataclass
class SynthSpec:
    canvas: int = 64
    categories: Tuple[str, ...] = CATEGORIES
    n_groups: int = 10
    group_size: int = 5
    distractors: int = 2
    noise_sigma: float = 0.04
    seed: int = 0
    area_band: Tuple[float, float] = (0.02, 0.30)

    def validate(self) -> None:
        if self.canvas < 8 or self.canvas % 8:
            raise ConfigError(f"canvas={self.canvas} must be a positive multiple of 8")
        if self.group_size < 2:
            raise ConfigError(f"group_size={self.group_size} must be >= 2")
        if self.n_groups < 1:
            raise ConfigError("n_groups must be >= 1")
        if not 0 <= self.distractors <= 2:
            raise ConfigError(f"distractors={self.distractors} must be in 0..2")
        unknown = set(self.categories) - set(CATEGORIES)
        if unknown or len(self.categories) < 2:
            raise ConfigError(f"categories must be >= 2 of {CATEGORIES}, got {self.categories}")
        lo, hi = self.area_band
        if not 0 < lo < hi < 1:
            raise ConfigError(f"area_band {self.area_band} must satisfy 0 < lo < hi < 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class ImageGroup:
    group_id: str
    images: np.ndarray  # N x S x S x 3 uint8
    cosal_masks: np.ndarray  # N x S x S bool
    sal_masks: np.ndarray  # N x S x S bool
    category: str = ""
    seed: int = 0
    names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def tensors(self, dtype=np.float32):
        """``(images N x 3 x S x S in [0,1], cosal N x 1 x S x S, sal N x 1 x S x S)``."""
        ims = self.images.transpose(0, 3, 1, 2).astype(dtype) / 255.0
        return ims, self.cosal_masks[:, None].astype(dtype), self.sal_masks[:, None].astype(dtype)


# --------------------------------------------------------------- rendering


def shape_mask(kind: str, size: int, cx: float, cy: float, r: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(angle), np.sin(angle)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if kind == "disc":
        return dx * dx + dy * dy <= r * r
    if kind == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "square":
        h = r * 0.85
        return (np.abs(u) <= h) & (np.abs(v) <= h)
    if kind == "cross":
        w = r * 0.35
        return ((np.abs(u) <= r) & (np.abs(v) <= w)) | ((np.abs(v) <= r) & (np.abs(u) <= w))
    if kind == "triangle":
        # equilateral, circumradius r
        inside = np.ones_like(u, dtype=bool)
        for k in range(3):
            t = angle + np.pi / 2 + k * 2 * np.pi / 3
            nx, ny = np.cos(t), np.sin(t)
            inside &= (dx * nx + dy * ny) >= -r / 2
        return inside
    raise ConfigError(f"unknown shape category {kind!r}")


def _background(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.45, size=(4, 4, 3))
    a = bilinear_matrix(4, size)
    smooth = np.einsum("ij,jkc,lk->ilc", a, coarse, a)
    return smooth + rng.normal(0.0, sigma, size=(size, size, 3))


def _colour(hue: float, rng: np.random.Generator) -> np.ndarray:
    sat = rng.uniform(0.7, 1.0)
    val = rng.uniform(0.8, 1.0)
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val))


def _place(rng, kind, size, band, occupied, max_tries=200):
    lo, hi = band
    for _ in range(max_tries):
        r = rng.uniform(0.12, 0.30) * size
        cx, cy = rng.uniform(r, size - r, size=2)
        m = shape_mask(kind, size, cx, cy, r, rng.uniform(0, 2 * np.pi))
        frac = m.mean()
        if not lo <= frac <= hi:
            continue
        if occupied is not None:
            # keep a one-pixel gap from anything already drawn
            grown = occupied.copy()
            grown[1:] |= occupied[:-1]
            grown[:-1] |= occupied[1:]
            grown[:, 1:] |= occupied[:, :-1]
            grown[:, :-1] |= occupied[:, 1:]
            if (m & grown).any():
                continue
        return m
    return None


def generate(spec: SynthSpec) -> List[ImageGroup]:
    """Deterministic synthetic co-saliency dataset."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    s = spec.canvas
    groups = []
    for gi in range(spec.n_groups):
        target = spec.categories[rng.integers(len(spec.categories))]
        others = [c for c in spec.categories if c != target]
        hue = rng.uniform()
        counts = rng.integers(0, spec.distractors + 1, size=spec.group_size)
        if spec.distractors:
            # distractors must appear in a strict, nonempty subset of the images
            clean = rng.integers(spec.group_size)
            counts[clean] = 0
            if not counts.any():
                other = (clean + 1 + rng.integers(spec.group_size - 1)) % spec.group_size
                counts[other] = rng.integers(1, spec.distractors + 1)
        images, cosal, sal = [], [], []
        for n in range(spec.group_size):
            while True:
                tmask = _place(rng, target, s, spec.area_band, None)
                if tmask is None:
                    raise ConfigError(f"cannot fit a {target} within area band {spec.area_band} on a {s}px canvas")
                img = _background(rng, s, spec.noise_sigma)
                img[tmask] = _colour(hue + rng.uniform(-0.04, 0.04), rng)
                occupied = tmask.copy()
                ok = True
                for _ in range(counts[n]):
                    kind = others[rng.integers(len(others))]
                    dmask = _place(rng, kind, s, spec.area_band, occupied)
                    if dmask is None:
                        ok = False
                        break
                    dhue = hue + rng.uniform(0.3, 0.7)
                    img[dmask] = _colour(dhue, rng)
                    occupied |= dmask
                if ok:
                    break
            images.append(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))
            cosal.append(tmask)
            sal.append(occupied)
        groups.append(ImageGroup(
            group_id=f"group_{gi:04d}",
            images=np.stack(images),
            cosal_masks=np.stack(cosal),
            sal_masks=np.stack(sal),
            category=target,
            seed=spec.seed,
            names=[f"img_{n:02d}" for n in range(spec.group_size)],
        ))
    return groups


# ------------------------------------------------------------------- disk


def _read(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _write(path: Path, arr: np.ndarray) -> None:
    try:
        Image.fromarray(arr).save(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def save_dataset(groups: Sequence[ImageGroup], root, ext: str = ".png") -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for g in groups:
        gdir = root / g.group_id
        gdir.mkdir(exist_ok=True)
        for name, im, cm, sm in zip(g.names, g.images, g.cosal_masks, g.sal_masks):
            _write(gdir / f"{name}{ext}", im if ext != ".pgm" else im.mean(axis=-1).astype(np.uint8))
            _write(gdir / f"{name}_gt{ext}", cm.astype(np.uint8) * 255)
            _write(gdir / f"{name}_sal{ext}", sm.astype(np.uint8) * 255)
        lines.append(g.group_id)
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    return root


def resize_array(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear (align-corners off) resize of the last two axes of a float array."""
    if arr.shape[-2:] == (h, w):
        return arr.astype(np.float64)
    ah = bilinear_matrix(arr.shape[-2], h)
    aw = bilinear_matrix(arr.shape[-1], w)
    return ah @ arr.astype(np.float64) @ aw.T


@dataclass
class LoadedGroup:
    group_id: str
    names: List[str]
    images: np.ndarray  # N x 3 x s x s float32 in [0, 1]
    original_sizes: List[Tuple[int, int]]
    masks: Optional[List[np.ndarray]] = None  # original-resolution binary co-saliency masks
    sal_masks: Optional[List[np.ndarray]] = None

    def masks_at(self, size: int, which: str = "cosal") -> np.ndarray:
        """Masks resized to the model input, thresholded at 0.5, ``N x 1 x s x s``."""
        src = self.masks if which == "cosal" else self.sal_masks
        if src is None:
            raise DataError(f"group {self.group_id} has no {which} masks")
        return np.stack([(resize_array(m.astype(np.float64), size, size) >= 0.5) for m in src])[:, None].astype(np.float32)


def _find_mask(gdir: Path, stem: str, suffix: str) -> Optional[Path]:
    for ext in IMAGE_EXTS:
        p = gdir / f"{stem}{suffix}{ext}"
        if p.exists():
            return p
    return None


def load_group(path, input_size: int = 64, require_gt: bool = True) -> LoadedGroup:
    """Load every image of a group directory, resized to ``input_size`` squared."""
    gdir = Path(path)
    if not gdir.is_dir():
        raise DataError(f"group directory {gdir} does not exist")
    stems = sorted(
        p for p in gdir.iterdir()
        if p.suffix.lower() in IMAGE_EXTS and not p.stem.endswith(("_gt", "_sal"))
    )
    if not stems:
        raise DataError(f"no images found in {gdir}")
    images, sizes, masks, sal = [], [], [], []
    have_sal = True
    for p in stems:
        rgb = _read(p, "RGB").astype(np.float64) / 255.0
        sizes.append(rgb.shape[:2])
        images.append(resize_array(rgb.transpose(2, 0, 1), input_size, input_size))
        gt = _find_mask(gdir, p.stem, "_gt")
        if gt is None:
            if require_gt:
                raise DataError(f"missing ground truth for {p}")
        else:
            masks.append(_read(gt, "L") >= 128)
        sp = _find_mask(gdir, p.stem, "_sal")
        if sp is None:
            have_sal = False
        else:
            sal.append(_read(sp, "L") >= 128)
    return LoadedGroup(
        group_id=gdir.name,
        names=[p.stem for p in stems],
        images=np.stack(images).astype(np.float32),
        original_sizes=sizes,
        masks=masks if len(masks) == len(stems) else None,
        sal_masks=sal if have_sal and sal else None,
    )


def list_groups(root) -> List[Path]:
    root = Path(root)
    manifest = root / MANIFEST
    if manifest.exists():
        return [root / line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_dataset(root, input_size: int = 64, require_gt: bool = True) -> List[LoadedGroup]:
    return [load_group(p, input_size, require_gt) for p in list_groups(root)]


def quantize(prob: np.ndarray) -> np.ndarray:
    """Map probabilities to 8-bit grey levels, ``round(255 * p)``."""
    return np.clip(np.round(255.0 * np.asarray(prob, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_maps(maps: Sequence[np.ndarray], names: Sequence[str], sizes: Sequence[Tuple[int, int]], out_dir, ext: str = ".png") -> List[Path]:
    """Restore each map to its original extent and save it as 8-bit greyscale."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for m, name, (h, w) in zip(maps, names, sizes):
        m = np.asarray(m, dtype=np.float64).reshape(np.asarray(m).shape[-2:])
        p = out / f"{name}{ext}"
        _write(p, quantize(resize_array(m, h, w)))
        paths.append(p)
    return paths


def read_map(path) -> np.ndarray:
    """Grey-level map file back to ``[0, 1]`` values (``v / 255``)."""
    return _read(Path(path), "L").astype(np.float64) / 255.0


def to_loaded(group: ImageGroup) -> LoadedGroup:
    """In-memory view of a synthetic group as if loaded from disk at native size."""
    ims, _, _ = group.tensors()
    s = group.images.shape[1]
    return LoadedGroup(
        group_id=group.group_id,
        names=list(group.names),
        images=ims,
        original_sizes=[(s, s)] * len(group),
        masks=list(group.cosal_masks),
        sal_masks=list(group.sal_masks),
    )
