"""Flat ``key = value`` configuration files.

Keys are namespaced (``backbone.channels``, ``gasa.blocks``, ``train.lr0``
...). Blank lines and ``#`` comments are ignored. Unknown keys are an error
so typos do not silently fall back to defaults.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping

from .backbone import BackboneConfig
from .data import SynthSpec
from .model import AblationFlags, ModelConfig
from .ops import ConfigError
from .train import TrainSchedule

MODEL_KEYS = {
    "backbone.input_size": int,
    "backbone.stem_channels": int,
    "backbone.channels": int,
    "gasa.blocks": int,
    "model.group_size": int,
    "model.seed": int,
    "model.se_reduction": int,
    "model.aux_batch": int,
    "loss.alpha": float,
    "loss.beta": float,
    "ablation.oiasg": bool,
    "ablation.gasa": bool,
    "ablation.ggd": bool,
    "ablation.gcpd": bool,
}

TRAIN_KEYS = {
    "train.lr0": float,
    "train.halve_every": int,
    "train.max_iters": int,
    "train.weight_decay": float,
    "train.seed": int,
    "train.subgroups_per_iter": int,
    "train.checkpoint_every": int,
    "train.dtype": str,
}

SYNTH_KEYS = {
    "synth.canvas": int,
    "synth.n_groups": int,
    "synth.group_size": int,
    "synth.distractors": int,
    "synth.noise_sigma": float,
    "synth.seed": int,
    "synth.categories": str,
    "synth.area_lo": float,
    "synth.area_hi": float,
}

ALL_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **SYNTH_KEYS}


def _coerce(key: str, raw: str):
    kind = ALL_KEYS[key]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse(text: str, source: str = "<config>") -> Dict[str, object]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load(path) -> Dict[str, object]:
    p = Path(path)
    return parse(p.read_text(), str(p))


def override(cfg: Mapping[str, object], pairs) -> Dict[str, object]:
    """Apply ``key=value`` strings on top of ``cfg`` (later wins)."""
    out = dict(cfg)
    for pair in pairs or ():
        out.update(parse(pair, "<flag>"))
    return out


def model_config(cfg: Mapping[str, object]) -> ModelConfig:
    bb = BackboneConfig(
        input_size=cfg.get("backbone.input_size", 64),
        stem_channels=cfg.get("backbone.stem_channels", 16),
        out_channels=cfg.get("backbone.channels", 64),
    )
    flags = AblationFlags(
        use_oiasg=cfg.get("ablation.oiasg", True),
        use_gasa=cfg.get("ablation.gasa", True),
        use_ggd=cfg.get("ablation.ggd", True),
        use_gcpd=cfg.get("ablation.gcpd", True),
    )
    c = bb.out_channels
    return ModelConfig(
        backbone=bb,
        group_size=cfg.get("model.group_size", 5),
        blocks=cfg.get("gasa.blocks", 8 if c >= 64 else 4),
        ablation=flags,
        loss_alpha=cfg.get("loss.alpha", 0.7),
        loss_beta=cfg.get("loss.beta", 0.3),
        aux_batch=cfg.get("model.aux_batch", 8),
        se_reduction=cfg.get("model.se_reduction", 4),
        seed=cfg.get("model.seed", 0),
    )


def schedule(cfg: Mapping[str, object]) -> TrainSchedule:
    defaults = TrainSchedule()
    return TrainSchedule(
        lr0=cfg.get("train.lr0", defaults.lr0),
        halve_every=cfg.get("train.halve_every", defaults.halve_every),
        max_iters=cfg.get("train.max_iters", defaults.max_iters),
        weight_decay=cfg.get("train.weight_decay", defaults.weight_decay),
        seed=cfg.get("train.seed", defaults.seed),
        subgroups_per_iter=cfg.get("train.subgroups_per_iter", defaults.subgroups_per_iter),
        checkpoint_every=cfg.get("train.checkpoint_every", defaults.checkpoint_every),
        dtype=cfg.get("train.dtype", defaults.dtype),
    )


def synth_spec(cfg: Mapping[str, object]) -> SynthSpec:
    d = SynthSpec()
    cats = cfg.get("synth.categories")
    return SynthSpec(
        canvas=cfg.get("synth.canvas", d.canvas),
        categories=tuple(c.strip() for c in cats.split(",")) if cats else d.categories,
        n_groups=cfg.get("synth.n_groups", d.n_groups),
        group_size=cfg.get("synth.group_size", d.group_size),
        distractors=cfg.get("synth.distractors", d.distractors),
        noise_sigma=cfg.get("synth.noise_sigma", d.noise_sigma),
        seed=cfg.get("synth.seed", d.seed),
        area_band=(cfg.get("synth.area_lo", d.area_band[0]), cfg.get("synth.area_hi", d.area_band[1])),
    )


def dump_model_config(mc: ModelConfig) -> str:
    f = mc.ablation
    pairs = [
        ("backbone.input_size", mc.backbone.input_size),
        ("backbone.stem_channels", mc.backbone.stem_channels),
        ("backbone.channels", mc.backbone.out_channels),
        ("gasa.blocks", mc.blocks),
        ("model.group_size", mc.group_size),
        ("model.seed", mc.seed),
        ("model.se_reduction", mc.se_reduction),
        ("model.aux_batch", mc.aux_batch),
        ("loss.alpha", mc.loss_alpha),
        ("loss.beta", mc.loss_beta),
        ("ablation.oiasg", str(f.use_oiasg).lower()),
        ("ablation.gasa", str(f.use_gasa).lower()),
        ("ablation.ggd", str(f.use_ggd).lower()),
        ("ablation.gcpd", str(f.use_gcpd).lower()),
    ]
    return "".join(f"{k} = {v}\n" for k, v in pairs)
