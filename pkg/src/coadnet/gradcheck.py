"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-4) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error, floored so all-zero gradients compare as absolute."""
    num = np.max(np.abs(analytic - numeric))
    den = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-6)
    return float(num / den)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4) -> Dict[int, float]:
    """Relative error of the analytic gradient of scalar ``f()`` for each input.

    Every input must be double precision with ``requires_grad`` set.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors")
        x.grad = None
    out = f()
    backward(out)
    errors = {}
    for i, x in enumerate(inputs):
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        errors[i] = relative_error(analytic, numerical_grad(f, x, h))
    return errors


# ------------------------------------------------------------- module suites
#
# Each case builds a tiny float64 instance, projects its outputs onto fixed
# random tensors to get a scalar, and checks d(scalar)/d(every input and
# parameter) against central differences.

TOLERANCE = 1e-3


def _project(outs, rng: np.random.Generator) -> Callable:
    from . import ops

    outs = outs if isinstance(outs, (tuple, list)) else (outs,)
    weights = [Tensor(rng.standard_normal(o.shape)) for o in outs]

    def scalar(outs):
        outs = outs if isinstance(outs, (tuple, list)) else (outs,)
        total = ops.sum_all(ops.mul(outs[0], weights[0]))
        for o, w in zip(outs[1:], weights[1:]):
            total = total + ops.sum_all(ops.mul(o, w))
        return total

    return scalar


def run_case(build: Callable, seed: int, h: float = 1e-5) -> float:
    """``build(rng) -> (forward, leaves)``; returns the worst relative error."""
    rng = np.random.default_rng(seed)
    forward, leaves = build(rng)
    proj = _project(forward(), rng)
    errs = check_gradients(lambda: proj(forward()), leaves, h)
    return max(errs.values())


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _params64(module, rng: np.random.Generator) -> list:
    # jitter so zero-initialized biases do not park ReLU inputs exactly on the kink
    module.astype(np.float64)
    for p in module.parameters():
        p.data += 0.1 * rng.standard_normal(p.shape)
    return module.parameters()


def op_cases() -> Dict[str, Callable]:
    from . import ops

    def conv(rng):
        x, w, b = _rand(rng, 2, 3, 6, 6), _rand(rng, 4, 3, 3, 3), _rand(rng, 4)
        return (lambda: ops.conv2d(x, w, b, padding=3, dilation=3)), [x, w, b]

    def conv_strided(rng):
        x, w, b = _rand(rng, 2, 3, 6, 6), _rand(rng, 2, 3, 4, 4), _rand(rng, 2)
        return (lambda: ops.conv2d(x, w, b, stride=2, padding=1)), [x, w, b]

    def deconv(rng):
        x, w, b = _rand(rng, 2, 3, 3, 3), _rand(rng, 3, 2, 4, 4), _rand(rng, 2)
        return (lambda: ops.conv_transpose2d(x, w, b, stride=2, padding=1)), [x, w, b]

    def softmax(rng):
        x = _rand(rng, 3, 5)
        return (lambda: ops.softmax(x, axis=0)), [x]

    def softmax_pool(rng):
        x = _rand(rng, 3, 2, 4)
        return (lambda: ops.softmax_pool(x, axis=0)), [x]

    def matmul(rng):
        a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
        return (lambda: ops.matmul(a, b)), [a, b]

    def pooling(rng):
        x = _rand(rng, 2, 3, 4, 4)
        return (lambda: (ops.channel_mean(x), ops.channel_max(x), ops.max_pool2d(x, 2, 2), ops.global_mean(x))), [x]

    def resize(rng):
        x = _rand(rng, 2, 3, 3)
        return (lambda: ops.bilinear_resize(x, 5, 7)), [x]

    def elementwise(rng):
        x, y = _rand(rng, 2, 3, 4), _rand(rng, 2, 3, 4)
        s, p = _rand(rng, 2), _rand(rng, 1, 3, 4)
        return (lambda: ops.mul_plane(ops.mul_channels(ops.sigmoid(x) * ops.relu(y) - x, s), p)), [x, y, s, p]

    return {
        "conv2d": conv, "conv2d_strided": conv_strided, "conv_transpose2d": deconv,
        "softmax": softmax, "softmax_pool": softmax_pool, "matmul": matmul,
        "pooling": pooling, "bilinear_resize": resize, "elementwise": elementwise,
    }


def module_cases() -> Dict[str, Callable]:
    """Composites at N=2, C=8, H=W=4 (the decoder at C=16, H=W=2)."""
    from . import ops
    from .backbone import Backbone, BackboneConfig
    from .gasa import GASA
    from .gcpd import GCPD, CoSaliencyHead
    from .ggd import GGD
    from .model import ConcatConvAggregator, ConcatDistributor, DeconvDecoder, joint_loss
    from .oiasg import OIaSG

    n, c, hw = 2, 8, 4

    def backbone(rng):
        m = Backbone(BackboneConfig(input_size=8, stem_channels=4, out_channels=8), rng)
        x = _rand(rng, n, 3, 8, 8)
        return (lambda: m(x)), [x] + _params64(m, rng)

    def oiasg(rng):
        m = OIaSG(c, rng)
        f = _rand(rng, n, c, hw, hw)
        return (lambda: m(f)[:2]), [f] + _params64(m, rng)

    def gasa(rng):
        m = GASA(c, 2, rng)
        u = _rand(rng, n, c, hw, hw)
        return (lambda: m(u)), [u] + _params64(m, rng)

    def ggd(rng):
        m = GGD(c, rng)
        u, g = _rand(rng, n, c, hw, hw), _rand(rng, c, hw, hw)
        return (lambda: m(u, g)), [u, g] + _params64(m, rng)

    def gcpd(rng):
        m, head = GCPD(16, rng), CoSaliencyHead(2, rng)
        x = _rand(rng, n, 16, 2, 2)
        return (lambda: head(m(x))), [x] + _params64(m, rng) + _params64(head, rng)

    def baselines(rng):
        agg, dist, dec = ConcatConvAggregator(c, n, rng), ConcatDistributor(c, rng), DeconvDecoder(c, rng)
        u = _rand(rng, n, c, hw, hw)
        leaves = [u] + _params64(agg, rng) + _params64(dist, rng) + _params64(dec, rng)
        return (lambda: dec(dist(u, agg(u)))), leaves

    def loss(rng):
        m, a = _rand(rng, n, 1, hw, hw), _rand(rng, 3, 1, hw, hw)
        tm = (rng.random((n, 1, hw, hw)) > 0.5).astype(np.float64)
        ta = (rng.random((3, 1, hw, hw)) > 0.5).astype(np.float64)
        return (lambda: joint_loss(ops.sigmoid(m), tm, ops.sigmoid(a), ta)), [m, a]

    return {
        "backbone": backbone, "oiasg": oiasg, "gasa": gasa, "ggd": ggd,
        "gcpd": gcpd, "baselines": baselines, "joint_loss": loss,
    }


def gradient_suite(seeds=range(5), h: float = 1e-5, cases: Dict[str, Callable] = None) -> Dict[str, float]:
    """Worst relative error per case over ``seeds``."""
    if cases is None:
        cases = {**op_cases(), **module_cases()}
    return {name: max(run_case(build, s, h) for s in seeds) for name, build in cases.items()}
