"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (see ``conftest.py``), or run this file directly.
"""
import itertools
import math
import sys
import time

import numpy as np
import pytest

import oracles
from coadnet import ops
from coadnet.checkpoint import BadMagicError, TruncatedError, VersionMismatchError, load_checkpoint, loads, save_checkpoint
from coadnet.data import SynthSpec, generate
from coadnet.experiments import run_ladder
from coadnet.ggd import GGD, gated_combine
from coadnet.gradcheck import TOLERANCE, gradient_suite
from coadnet.metrics import f_measure, mae, pr_curve, s_measure
from coadnet.model import PRESETS, AblationFlags, CoADNet, forward_group, joint_loss, preset, weighted_objective
from coadnet.tensor import Tensor, no_grad
from coadnet.train import TrainSchedule, predict, train

RESULTS = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    RESULTS.append(line)
    print(line)


# ------------------------------------------------------------------ gradients


def test_gradient_suite():
    t0 = time.perf_counter()
    worst = gradient_suite(range(5))
    secs = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err <= TOLERANCE and secs <= 120
    record("gradient suite", ok, f"{len(worst)} cases x 5 seeds, worst {name} {err:.2e} (tol {TOLERANCE:g}), {secs:.0f}s")
    assert ok


# -------------------------------------------------------------------- oracles


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-12))


def test_oracle_suite():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    errs = {}
    x = rng.standard_normal((4, 10, 10))
    w = rng.standard_normal((4, 4, 3, 3))
    b = rng.standard_normal(4)
    for d in (1, 3, 5, 7):
        errs[f"conv2d d={d}"] = _rel(ops.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=d, dilation=d).data,
                                     oracles.conv2d(x, w, b, padding=d, dilation=d))
    w4 = rng.standard_normal((3, 4, 4, 4))
    errs["conv2d s=2"] = _rel(ops.conv2d(Tensor(x), Tensor(w4), None, stride=2, padding=1).data,
                              oracles.conv2d(x, w4, None, stride=2, padding=1))
    xt, wt = rng.standard_normal((4, 5, 5)), rng.standard_normal((4, 3, 4, 4))
    errs["conv_transpose2d"] = _rel(ops.conv_transpose2d(Tensor(xt), Tensor(wt), Tensor(b[:3]), 2, 1).data,
                                    oracles.conv_transpose2d(xt, wt, b[:3], 2, 1))
    s = rng.standard_normal((6, 7)) * 5
    errs["softmax"] = _rel(ops.softmax(Tensor(s), 0).data, oracles.softmax(s, 0))
    sp = rng.standard_normal((5, 3, 3))
    errs["softmax pool"] = _rel(ops.softmax_pool(Tensor(sp), 0).data, oracles.softmax_pool(sp))
    a, c = rng.standard_normal((9, 6)), rng.standard_normal((6, 5))
    errs["matmul"] = _rel(ops.matmul(Tensor(a), Tensor(c)).data, oracles.matmul(a, c))
    errs["max pool"] = _rel(ops.max_pool2d(Tensor(x), 2, 2).data, oracles.max_pool2d(x, 2, 2))
    errs["channel mean"] = _rel(ops.channel_mean(Tensor(x)).data, oracles.channel_mean(x))
    errs["channel max"] = _rel(ops.channel_max(Tensor(x)).data, oracles.channel_max(x))
    errs["global mean"] = _rel(ops.global_mean(Tensor(x)).data, oracles.global_mean(x))
    secs = time.perf_counter() - t0
    name, err = max(errs.items(), key=lambda kv: kv[1])
    ok = err <= 1e-6 and secs <= 60
    record("oracle suite", ok, f"{len(errs)} comparisons, worst {name} {err:.1e} (tol 1e-6), {secs:.1f}s")
    assert ok


# ---------------------------------------------------------- order-insensitivity


def _group_state(model, images):
    """G from GASA, y of every FD unit, and the maps for one group."""
    feats = model.backbone(Tensor(images))
    u, _, _ = model.intra_saliency(feats)
    g = model.gasa(u)
    x = model.ggd(u, g)
    ys = []
    for unit in model.gcpd.units:
        x, state = unit(x, return_state=True)
        ys.append(state["y"].data)
    return g.data, ys, model.cosh(x).data


def test_order_insensitivity():
    t0 = time.perf_counter()
    model = CoADNet(preset("default"))
    images = generate(SynthSpec(n_groups=1, seed=5))[0].tensors()[0]
    with no_grad():
        g_ref, y_ref, m_ref = _group_state(model, images)
        dg = dy = dm = 0.0
        for perm in itertools.permutations(range(5)):
            perm = list(perm)
            g, ys, maps = _group_state(model, images[perm])
            dg = max(dg, float(np.abs(g - g_ref).max()))
            dy = max(dy, max(float(np.abs(a - b).max()) for a, b in zip(ys, y_ref)))
            dm = max(dm, float(np.abs(maps - m_ref[perm]).max()))
    secs = time.perf_counter() - t0
    ok = dg <= 1e-5 and dy <= 1e-5 and dm <= 1e-5 and secs <= 120
    record("order-insensitivity", ok, f"120 permutations: max |dG| {dg:.1e}, |dy| {dy:.1e}, |dM| {dm:.1e}, {secs:.0f}s")
    assert ok


# -------------------------------------------------------------------- gating


def test_gating_bounds():
    rng = np.random.default_rng(0)
    ggd = GGD(64, rng)
    u = Tensor(rng.standard_normal((5, 64, 56, 56)).astype(np.float32) * 3)
    g = Tensor(rng.standard_normal((64, 56, 56)).astype(np.float32) * 3)
    with no_grad():
        p, _ = ggd.gate_probability(u, g)
        x = ggd(u, g).data
    gb = np.broadcast_to(g.data, u.shape)
    lo, hi = np.minimum(gb, u.data), np.maximum(gb, u.data)
    bad = int(np.count_nonzero((x < lo) | (x > hi)))
    p_bad = int(np.count_nonzero((p.data <= 0) | (p.data >= 1)))
    # plus a stress pass straight through the combine with extreme magnitudes
    n = 1_000_000
    pp = rng.uniform(np.nextafter(0, 1), 1, n).astype(np.float32)
    pp[pp >= 1] = np.nextafter(np.float32(1), np.float32(0))
    gg = (rng.standard_normal(n) * 10.0 ** rng.uniform(-6, 6, n)).astype(np.float32)
    uu = (rng.standard_normal(n) * 10.0 ** rng.uniform(-6, 6, n)).astype(np.float32)
    xx = gated_combine(Tensor(pp), Tensor(gg), Tensor(uu)).data
    bad += int(np.count_nonzero((xx < np.minimum(gg, uu)) | (xx > np.maximum(gg, uu))))
    ok = bad == 0 and p_bad == 0 and x.size >= n
    record("gating bounds", ok, f"{x.size + n} elements, {bad} bound violations, {p_bad} P outside (0,1)")
    assert ok


# ---------------------------------------------------------------------- loss


def test_loss_anchors():
    rng = np.random.default_rng(0)
    tc = (rng.random((5, 1, 16, 16)) > 0.5).astype(np.float64)
    ts = (rng.random((8, 1, 16, 16)) > 0.5).astype(np.float64)
    half_c, half_s = Tensor(np.full(tc.shape, 0.5)), Tensor(np.full(ts.shape, 0.5))
    l_c = float(ops.bce(half_c, tc).data)
    l_s = float(ops.bce(half_s, ts).data)
    perfect = float(joint_loss(Tensor(tc.copy()), tc, Tensor(ts.copy()), ts).data)
    weighted = weighted_objective(1.0, 0.0, 0.7, 0.3)
    ok = abs(l_c - math.log(2)) <= 1e-6 and abs(l_s - math.log(2)) <= 1e-6 and perfect <= 1e-5 and weighted == 0.7
    record("loss anchors", ok, f"L_c-ln2 {l_c - math.log(2):.1e}, L_s-ln2 {l_s - math.log(2):.1e}, perfect {perfect:.1e}, weighting {weighted}")
    assert ok


# ------------------------------------------------------------------- overfit

OVERFIT_ITERS = 2000
OVERFIT_LR = 1e-3
OVERFIT_AUX = 5


@pytest.mark.slow
def test_overfit_single_group():
    t0 = time.perf_counter()
    group = generate(SynthSpec(n_groups=1, group_size=5, seed=3))
    model = CoADNet(preset("default", aux_batch=OVERFIT_AUX))
    sched = TrainSchedule(lr0=OVERFIT_LR, halve_every=500, max_iters=OVERFIT_ITERS, subgroups_per_iter=1)
    losses = train(model, group, sched)
    final = float(np.mean(losses[-50:]))
    ims, cosal, _ = group[0].tensors()
    maps = predict(model, ims)
    fs = [f_measure(m, c[0]) for m, c in zip(maps, cosal)]
    secs = time.perf_counter() - t0
    ok = final < 0.05 and np.mean(fs) > 0.95 and secs <= 600
    record("overfit", ok, f"mean loss of last 50 iters {final:.4f} (< 0.05), F mean {np.mean(fs):.3f} min {min(fs):.3f} (> 0.95), {secs:.0f}s")
    assert ok


# ------------------------------------------------------------------ ablation

ABLATION_ITERS = 3000
ABLATION_LR = 1e-3
ABLATION_HALVE = 1000


@pytest.mark.slow
def test_ablation_ordering():
    t0 = time.perf_counter()
    train_groups = generate(SynthSpec(n_groups=200, seed=0))
    test_groups = generate(SynthSpec(n_groups=50, seed=1))
    sched = TrainSchedule(lr0=ABLATION_LR, halve_every=ABLATION_HALVE, max_iters=ABLATION_ITERS)
    rows = [("baseline", AblationFlags.baseline()), ("full", AblationFlags())]
    base, full = run_ladder(preset("default"), sched, train_groups, test_groups, rows)
    secs = time.perf_counter() - t0
    fb, ff = base.report.f_measure, full.report.f_measure
    ok = ff >= fb and secs <= 1800
    record("ablation ordering", ok, f"F full {ff:.4f} vs baseline {fb:.4f} (margin {ff - fb:+.4f}); "
           f"MAE {full.report.mae:.4f} vs {base.report.mae:.4f}; {secs / 60:.1f} min")
    assert ok


# ------------------------------------------------------------------- metrics


def test_metrics_suite():
    m = mae(np.array([[1, 0], [0.5, 0]]), np.array([[1, 0], [0, 0]]))
    gt = np.zeros((8, 8))
    gt[:4] = 1
    f = f_measure(np.ones((8, 8)), gt)
    sq = np.zeros((8, 8))
    sq[2:6, 2:6] = 1
    s = s_measure(sq, sq)
    rng = np.random.default_rng(0)
    monotone = True
    for _ in range(20):
        maps = [rng.random((16, 16)) for _ in range(3)]
        gts = [rng.random((16, 16)) > 0.7 for _ in range(3)]
        monotone &= bool((np.diff(pr_curve(maps, gts)[:, 1]) <= 0).all())
    ok = abs(m - 0.125) <= 1e-6 and abs(f - 0.565217) <= 1e-6 and abs(s - 1) <= 1e-6 and monotone
    record("metrics suite", ok, f"MAE {m:.6f}, F {f:.6f}, S {s:.6f}, recall monotone on 20 random sets: {monotone}")
    assert ok


# ---------------------------------------------------------------- checkpoint


def test_checkpoint():
    model = CoADNet(preset("default"))
    blob = save_checkpoint(model)
    clone = load_checkpoint(blob, CoADNet(preset("default", seed=9)))
    exact = all(p.data.tobytes() == q.data.tobytes() for p, q in zip(model.parameters(), clone.parameters()))
    caught = []
    for label, corrupt, err in [
        ("magic", b"NOPE" + blob[4:], BadMagicError),
        ("version", blob[:4] + (99).to_bytes(4, "little") + blob[8:], VersionMismatchError),
        ("truncated", blob[: len(blob) // 2], TruncatedError),
    ]:
        try:
            loads(corrupt)
        except err as exc:
            caught.append(label if label != "truncated" or exc.parameter else "")
    ok = exact and caught == ["magic", "version", "truncated"]
    record("checkpoint", ok, f"{len(model.parameters())} tensors bit-exact: {exact}; errors raised: {', '.join(caught)}")
    assert ok


# -------------------------------------------------------------- shape ledger


def test_shape_ledger():
    details, ok = [], True
    for name in PRESETS:
        cfg = preset(name)
        model = CoADNet(cfg)
        s, c = cfg.backbone.input_size, cfg.backbone.out_channels
        images = np.random.default_rng(0).random((cfg.group_size, 3, s, s)).astype(np.float32)
        with no_grad():
            feats = model.backbone(Tensor(images))
            z = model.gcpd(feats)
            maps, _ = forward_group(model, images)
        h = s // 8
        good = (feats.shape == (5, c, h, h) and z.shape == (5, c // 8, 8 * h, 8 * h) and maps.shape == (5, 1, s, s))
        ok &= good
        details.append(f"{name}: F {feats.shape[1:]} Z {z.shape[1:]} M {maps.shape[1:]}")
    record("shape ledger", ok, "; ".join(details))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
