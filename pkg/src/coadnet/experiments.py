"""Train/evaluate helpers shared by the command line and the example scripts."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import LoadedGroup, to_loaded, write_maps
from .metrics import MetricsReport, evaluate
from .model import AblationFlags, CoADNet, ModelConfig, parameter_census
from .train import TrainSchedule, predict, train

log = logging.getLogger(__name__)


def as_loaded(groups) -> List[LoadedGroup]:
    return [g if isinstance(g, LoadedGroup) else to_loaded(g) for g in groups]


def predict_groups(model: CoADNet, groups: Sequence[LoadedGroup]) -> List[np.ndarray]:
    """One ``N x s x s`` stack of maps per group, at model input size."""
    return [predict(model, g.images.astype(model.backbone.stages[0].conv.weight.dtype)) for g in groups]


def evaluate_model(model: CoADNet, groups, maps_dir=None) -> MetricsReport:
    """Predict every group, restore maps to original size and score them.

    Maps go through 8-bit quantization exactly as when written to disk, so
    the numbers match a later ``eval`` over saved maps. With ``maps_dir``
    they are also saved, one sub-directory per group.
    """
    from .data import quantize, resize_array

    groups = as_loaded(groups)
    preds, gts, ids = [], [], []
    for g, maps in zip(groups, predict_groups(model, groups)):
        if g.masks is None:
            raise ValueError(f"group {g.group_id} has no ground truth")
        if maps_dir is not None:
            write_maps(maps, g.names, g.original_sizes, f"{maps_dir}/{g.group_id}")
        for m, gt, (h, w) in zip(maps, g.masks, g.original_sizes):
            preds.append(quantize(resize_array(m, h, w)) / 255.0)
            gts.append(gt)
            ids.append(g.group_id)
    return evaluate(preds, gts, ids)


@dataclass
class LadderRow:
    label: str
    flags: AblationFlags
    parameters: int
    final_loss: float
    report: MetricsReport
    seconds: float


def parse_rows(spec: str) -> List[Tuple[str, AblationFlags]]:
    """``"ladder"`` or a comma list of row labels such as ``baseline,+GCPD``."""
    ladder = AblationFlags.ladder()
    if spec.strip().lower() in ("", "ladder", "all"):
        return ladder
    by_name = {name.lower(): (name, flags) for name, flags in ladder}
    by_name["full"] = ladder[-1]
    rows = []
    for item in spec.split(","):
        key = item.strip().lower()
        if key not in by_name:
            raise KeyError(f"unknown ablation row {item.strip()!r}; choose from {', '.join(n for n, _ in ladder)}")
        rows.append(by_name[key])
    return rows


def run_ladder(
    base: ModelConfig,
    schedule: TrainSchedule,
    train_groups,
    test_groups,
    rows: Optional[Sequence[Tuple[str, AblationFlags]]] = None,
) -> List[LadderRow]:
    """Train one model per row from the same seed and score it on ``test_groups``."""
    out = []
    test_groups = as_loaded(test_groups)
    for label, flags in rows or AblationFlags.ladder():
        t0 = time.perf_counter()
        model = CoADNet(dataclasses.replace(base, ablation=flags))
        losses = train(model, train_groups, schedule)
        report = evaluate_model(model, test_groups)
        row = LadderRow(label, flags, parameter_census(model)["total"], float(np.mean(losses[-20:])),
                        report, time.perf_counter() - t0)
        log.info("%-9s F %.4f  MAE %.4f  S %.4f  (%.0fs)", label, report.f_measure, report.mae,
                 report.s_measure, row.seconds)
        out.append(row)
    return out


def ladder_table(rows: Sequence[LadderRow]) -> str:
    ref = rows[0].report.f_measure
    out = [f"{'row':<9} {'params':>8} {'loss':>7} {'F':>7} {'dF':>8} {'MAE':>7} {'S':>7} {'max-F':>7}"]
    out.append("-" * len(out[0]))
    for r in rows:
        m = r.report
        out.append(f"{r.label:<9} {r.parameters:>8d} {r.final_loss:>7.4f} {m.f_measure:>7.4f} "
                   f"{m.f_measure - ref:>+8.4f} {m.mae:>7.4f} {m.s_measure:>7.4f} {m.max_f:>7.4f}")
    return "\n".join(out) + "\n"
