"""Co-saliency evaluation: MAE, adaptive F-measure, P-R curve, S-measure.

Maps are float arrays in [0, 1]; ground truths are binary arrays of the
same extent. Dataset scores are arithmetic means of per-image scores.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

BETA2 = 0.3
N_THRESHOLDS = 256
_EPS = np.finfo(np.float64).eps


class EmptyGroundTruth(ValueError):
    """The ground-truth mask has no positive pixel."""


def _check(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ValueError(f"map extent {pred.shape} != ground-truth extent {gt.shape}")
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_beta(precision: float, recall: float, beta2: float = BETA2) -> float:
    if precision + recall == 0:
        return 0.0
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def _precision_recall(binary: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    tp = np.count_nonzero(binary & gt)
    n_pred = np.count_nonzero(binary)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / np.count_nonzero(gt)
    return precision, recall


def f_measure(pred, gt, beta2: float = BETA2) -> float:
    """F-beta after binarizing at ``min(2 * mean(pred), 1)``."""
    pred, gt = _check(pred, gt)
    if not gt.any():
        raise EmptyGroundTruth("F-measure is undefined for a mask with no positive pixel")
    thresh = min(2.0 * pred.mean(), 1.0)
    return f_beta(*_precision_recall(pred >= thresh, gt), beta2=beta2)


def pr_curve(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> np.ndarray:
    """``256 x 2`` array of (precision, recall), threshold ``t/255`` for ``t = 0..255``.

    Per-threshold values are means of per-image values; images whose mask
    is empty are skipped.
    """
    if not len(preds):
        raise ValueError("pr_curve needs at least one map")
    thresholds = np.arange(N_THRESHOLDS) / 255.0
    curves = []
    for pred, gt in zip(preds, gts):
        pred, gt = _check(pred, gt)
        if not gt.any():
            continue
        # counts of pred >= t for every threshold via binary search on sorted values
        flat = np.sort(pred.ravel())
        pos = np.sort(pred[gt])
        n_pred = flat.size - np.searchsorted(flat, thresholds, side="left")
        tp = pos.size - np.searchsorted(pos, thresholds, side="left")
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        recall = tp / pos.size
        curves.append(np.stack([precision, recall], axis=1))
    if not curves:
        raise EmptyGroundTruth("every ground-truth mask is empty")
    return np.mean(curves, axis=0)


# ----------------------------------------------------------------- S-measure


def _object_score(pred: np.ndarray, mask: np.ndarray) -> float:
    x = pred[mask]
    if x.size == 0:
        return 0.0
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = np.where(gt, pred, 0.0)
    bg = np.where(gt, 0.0, 1.0 - pred)
    u = gt.mean()
    return u * _object_score(fg, gt) + (1 - u) * _object_score(bg, ~gt)


def _centroid(gt: np.ndarray) -> Tuple[int, int]:
    h, w = gt.shape
    if not gt.any():
        return int(round(w / 2)), int(round(h / 2))
    total = gt.sum()
    cols = np.arange(1, w + 1)
    rows = np.arange(1, h + 1)
    x = int(round(float((gt.sum(axis=0) * cols).sum() / total)))
    y = int(round(float((gt.sum(axis=1) * rows).sum() / total)))
    return x, y


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    x, y = _centroid(gt)
    area = h * w
    g = gt.astype(np.float64)
    quads = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    weights = [x * y / area, (w - x) * y / area, x * (h - y) / area, (w - x) * (h - y) / area]
    return float(sum(wt * _ssim(pred[q], g[q]) for wt, q in zip(weights, quads)))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * S_object + (1 - alpha) * S_region``."""
    pred, gt = _check(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    q = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(q, 0.0))


# ------------------------------------------------------------------ reports


@dataclass
class MetricsReport:
    f_measure: float
    mae: float
    s_measure: float
    max_f: float
    pr_curve: np.ndarray
    n_images: int
    n_undefined_f: int = 0
    per_group: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = [
            f"f_measure\t{self.f_measure:.6f}",
            f"mae\t{self.mae:.6f}",
            f"s_measure\t{self.s_measure:.6f}",
            f"max_f\t{self.max_f:.6f}",
            f"n_images\t{self.n_images}",
            f"n_undefined_f\t{self.n_undefined_f}",
        ]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [("F-measure", self.f_measure), ("MAE", self.mae), ("S-measure", self.s_measure), ("max-F", self.max_f)]
        out = [f"{'metric':<10} {'value':>8}", "-" * 19]
        out += [f"{k:<10} {v:>8.4f}" for k, v in rows]
        out.append(f"{'images':<10} {self.n_images:>8d}")
        if self.per_group:
            out.append("")
            out.append(f"{'group':<16} {'F':>7} {'MAE':>7} {'S':>7}")
            for gid, (f, m, s) in sorted(self.per_group.items()):
                out.append(f"{gid:<16} {f:>7.4f} {m:>7.4f} {s:>7.4f}")
        return "\n".join(out) + "\n"

    def pr_csv(self) -> str:
        buf = io.StringIO()
        buf.write("threshold,precision,recall\n")
        for t, (p, r) in enumerate(self.pr_curve):
            buf.write(f"{t},{p:.6f},{r:.6f}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str) -> dict:
        out = {}
        for line in text.strip().splitlines():
            k, v = line.split("\t")
            out[k] = float(v)
        return out


def evaluate(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], groups: Optional[Sequence[str]] = None) -> MetricsReport:
    """Aggregate every metric over a list of (map, mask) pairs."""
    if not len(preds):
        raise ValueError("nothing to evaluate")
    fs, maes, ss = [], [], []
    undefined = 0
    by_group = {}
    for i, (p, g) in enumerate(zip(preds, gts)):
        m, s = mae(p, g), s_measure(p, g)
        try:
            f = f_measure(p, g)
        except EmptyGroundTruth:
            f = None
            undefined += 1
        maes.append(m)
        ss.append(s)
        if f is not None:
            fs.append(f)
        if groups is not None:
            by_group.setdefault(groups[i], []).append((f, m, s))
    if undefined:
        warnings.warn(f"F-measure undefined for {undefined} image(s) with empty masks; excluded from the mean")
    curve = pr_curve(preds, gts)
    max_f = max(f_beta(p, r) for p, r in curve)
    per_group = {}
    for gid, vals in by_group.items():
        gf = [v[0] for v in vals if v[0] is not None]
        per_group[gid] = (float(np.mean(gf)) if gf else float("nan"),
                          float(np.mean([v[1] for v in vals])), float(np.mean([v[2] for v in vals])))
    return MetricsReport(
        f_measure=float(np.mean(fs)) if fs else 0.0,
        mae=float(np.mean(maes)),
        s_measure=float(np.mean(ss)),
        max_f=float(max_f),
        pr_curve=curve,
        n_images=len(preds),
        n_undefined_f=undefined,
        per_group=per_group,
    )
