"""``coadnet`` command line.

Exit status: 0 ok, 2 usage, 3 I/O, 4 configuration, 5 failed check.
``COAD_THREADS`` caps the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError, generate, load_dataset, load_group, quantize, write_maps
from .ops import ConfigError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3, 4, 5

log = logging.getLogger("coadnet")


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- config


def _settings(args, *, config: Optional[str] = None) -> Dict[str, object]:
    """Config file, then ``--set`` pairs, then ``--seed`` (later wins)."""
    path = config if config is not None else getattr(args, "config", None)
    cfg = cfgmod.load(path) if path else {}
    cfg = cfgmod.override(cfg, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        for key in ("train.seed", "model.seed", "synth.seed"):
            cfg[key] = args.seed
    return cfg


def sidecar(ckpt) -> Path:
    return Path(f"{ckpt}.cfg")


def _schedule_text(sched) -> str:
    return "".join(f"train.{k} = {v}\n" for k, v in dataclasses.asdict(sched).items())


def _load_model(ckpt: str, config: Optional[str], overrides=()):
    """Rebuild the network described by the checkpoint's sidecar and load it."""
    from .model import CoADNet

    path = config or sidecar(ckpt)
    if not Path(path).exists():
        raise ConfigError(f"no model config: pass --config or keep {sidecar(ckpt)} next to the checkpoint")
    cfg = cfgmod.override(cfgmod.load(path), overrides)
    model = CoADNet(cfgmod.model_config(cfg))
    try:
        load_checkpoint(ckpt, model)
    except CheckpointError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{ckpt} does not match the model in {path}: {exc}") from None
    return model


# -------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    spec = cfgmod.synth_spec(_settings(args, config=args.spec))
    groups = generate(spec)
    from .data import save_dataset

    save_dataset(groups, args.out, ext=args.ext)
    print(f"wrote {len(groups)} groups of {spec.group_size} images to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import CoADNet, parameter_census
    from .train import train

    cfg = _settings(args)
    if args.iters is not None:
        cfg["train.max_iters"] = args.iters
    mc = cfgmod.model_config(cfg)
    sched = cfgmod.schedule(cfg)
    groups = load_dataset(args.data, mc.backbone.input_size)
    model = CoADNet(mc)
    print(f"training {mc.ablation.label()} ({parameter_census(model)['total']} parameters) "
          f"on {len(groups)} groups for {sched.max_iters} iterations")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar(out).write_text(cfgmod.dump_model_config(mc) + _schedule_text(sched))
    losses = train(model, groups, sched, on_checkpoint=lambda it: save_checkpoint(model, out),
                   log_every=args.log_every)
    save_checkpoint(model, out)
    Path(f"{out}.loss.tsv").write_text("".join(f"{i}\t{v:.8f}\n" for i, v in enumerate(losses)))
    print(f"final loss {losses[-1]:.5f}; checkpoint {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiments import evaluate_model

    model = _load_model(args.ckpt, args.config, args.set)
    groups = load_dataset(args.data, model.config.backbone.input_size, require_gt=True)
    report = evaluate_model(model, groups, maps_dir=args.maps)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_tsv())
    pr = Path(args.pr) if args.pr else out.with_suffix(".pr.csv")
    pr.write_text(report.pr_csv())
    print(report.to_table(), end="")
    print(f"report {out}; P-R curve {pr}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .train import predict

    model = _load_model(args.ckpt, args.config, args.set)
    group = load_group(args.group, model.config.backbone.input_size, require_gt=False)
    maps = predict(model, group.images)
    paths = write_maps(maps, group.names, group.original_sizes, args.out)
    print(f"wrote {len(paths)} maps to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import ladder_table, parse_rows, run_ladder

    try:
        rows = parse_rows(args.flags)
    except KeyError as exc:
        raise ConfigError(f"--flags: {exc.args[0]}") from None
    cfg = _settings(args)
    if args.iters is not None:
        cfg["train.max_iters"] = args.iters
    mc = cfgmod.model_config(cfg)
    sched = cfgmod.schedule(cfg)
    groups = load_dataset(args.data, mc.backbone.input_size)
    if args.test_data:
        test = load_dataset(args.test_data, mc.backbone.input_size)
    else:
        k = args.holdout if args.holdout is not None else max(1, len(groups) // 5)
        if not 0 < k < len(groups):
            raise ConfigError(f"--holdout {k} must leave training and test groups out of {len(groups)}")
        groups, test = groups[:-k], groups[-k:]
    print(f"{len(groups)} training groups, {len(test)} test groups, {sched.max_iters} iterations per row")
    result = run_ladder(mc, sched, groups, test, rows)
    table = ladder_table(result)
    print(table, end="")
    if args.report:
        Path(args.report).write_text(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, gradient_suite, module_cases, op_cases

    cases = {**op_cases(), **module_cases()}
    if args.only:
        unknown = set(args.only) - set(cases)
        if unknown:
            raise ConfigError(f"--only: unknown case(s) {sorted(unknown)}; known: {', '.join(cases)}")
        cases = {k: cases[k] for k in args.only}
    tol = args.tol if args.tol is not None else TOLERANCE
    worst = gradient_suite(range(args.seeds), args.step, cases)
    bad = 0
    for name, err in worst.items():
        ok = err <= tol
        bad += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<18} max rel err {err:.2e}")
    print(f"{len(worst) - bad}/{len(worst)} cases within {tol:g} over {args.seeds} seeds")
    if bad:
        raise CheckFailed(f"{bad} gradient check(s) above tolerance")
    return EXIT_OK


def _heatmap(feat: np.ndarray, size: int) -> np.ndarray:
    """Channel mean, min-max stretched, nearest-upsampled to ``size``."""
    m = feat.mean(axis=0)
    lo, hi = m.min(), m.max()
    m = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
    r = size // m.shape[0]
    return quantize(np.kron(m, np.ones((r, r))))


def cmd_inspect(args) -> int:
    from PIL import Image

    from .model import forward_group, parameter_census
    from .tensor import no_grad

    model = _load_model(args.ckpt, args.config, args.set)
    for name, p in model.named_parameters():
        print(f"{name:<40} {'x'.join(map(str, p.shape)):>14} {p.size:>8d}")
    census = parameter_census(model)
    print("  ".join(f"{k}={v}" for k, v in census.items()))
    if not args.out:
        return EXIT_OK
    size = model.config.backbone.input_size
    if args.group:
        group = load_group(args.group, size, require_gt=False)
        images, names = group.images, group.names
    else:
        from .data import SynthSpec

        g = generate(SynthSpec(canvas=size, n_groups=1, group_size=model.config.group_size, seed=args.seed or 0))[0]
        images, names = g.tensors()[0], g.names
    dtype = model.backbone.stages[0].conv.weight.dtype
    with no_grad():
        maps, _, u, x = forward_group(model, images[: model.config.group_size].astype(dtype), return_features=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(names[: len(maps.data)]):
        rgb = np.clip(np.round(images[i].transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(rgb).save(out / f"{name}.png")
        Image.fromarray(_heatmap(u.data[i], size)).save(out / f"{name}_U.png")
        Image.fromarray(_heatmap(x.data[i], size)).save(out / f"{name}_X.png")
        Image.fromarray(quantize(maps.data[i, 0])).save(out / f"{name}_M.png")
    print(f"wrote U / X heatmaps for {len(maps.data)} images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coadnet", description="Co-saliency detection with group attention, in numpy.")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[shared], **kw)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int, help="seed for data, init and batching")

    sp = sub.add_parser("gen-data", help="write a synthetic dataset")
    sp.add_argument("--spec", help="config file with synth.* keys")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ext", default=".png", choices=(".png", ".pgm"))
    common(sp, config=False)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path (config goes to <out>.cfg)")
    sp.add_argument("--iters", type=int, help="shorthand for --set train.max_iters=N")
    sp.add_argument("--log-every", type=int, default=100)
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--report", required=True, help="metric<TAB>value file")
    sp.add_argument("--pr", help="P-R curve CSV (default: <report>.pr.csv)")
    sp.add_argument("--maps", help="also write predicted maps here")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="write co-saliency maps for one group")
    sp.add_argument("--group", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("ablate", help="train and compare ablation rows")
    sp.add_argument("--data", required=True)
    sp.add_argument("--flags", default="ladder", help="'ladder' or a comma list of baseline,+OIaSG,+GASA,+GGD,+GCPD")
    sp.add_argument("--test-data", help="held-out dataset (default: last --holdout groups of --data)")
    sp.add_argument("--holdout", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--report", help="also write the table here")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--only", nargs="+", metavar="CASE")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("inspect", help="list parameters and render U / X heatmaps")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--group", help="group directory (default: one synthetic group)")
    sp.add_argument("--out", help="heatmap directory; omit to only list parameters")
    common(sp)
    sp.set_defaults(func=cmd_inspect)
    return p


def _thread_limit():
    raw = os.environ.get("COAD_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COAD_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"COAD_THREADS={n} must be >= 1")
    return n


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        limit = _thread_limit()
        with threadpool_limits(limits=limit):
            return args.func(args)
    except CheckFailed as exc:
        print(f"coadnet: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (CheckpointError, DataError, OSError) as exc:
        print(f"coadnet: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeError) as exc:
        print(f"coadnet: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
