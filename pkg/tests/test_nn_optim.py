import math

import numpy as np
import pytest

from coadnet.nn import Conv2d, Linear, Module, ModuleList, kaiming_uniform, zero_
from coadnet.optim import adam_step, step_lr
from coadnet.tensor import Parameter, Tensor


class Pair(Module):
    def __init__(self, rng):
        super().__init__()
        self.a = Linear(rng, 3, 2)
        self.items = ModuleList([Conv2d(rng, 1, 1, 3, padding=1)])


def test_named_parameters_are_dotted(rng):
    names = [n for n, _ in Pair(rng).named_parameters()]
    assert names == ["a.weight", "a.bias", "items.0.weight", "items.0.bias"]


def test_state_dict_round_trip(rng):
    a, b = Pair(rng), Pair(np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(p.data, q.data)


def test_load_state_dict_errors(rng):
    m = Pair(rng)
    state = m.state_dict()
    with pytest.raises(KeyError):
        m.load_state_dict({k: v for k, v in state.items() if k != "a.bias"})
    state["a.bias"] = np.zeros(5)
    with pytest.raises(ValueError):
        m.load_state_dict(state)


def test_kaiming_bound(rng):
    w = kaiming_uniform(rng, (1000,), fan_in=50)
    bound = math.sqrt(2.0) * math.sqrt(3.0 / 50)
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound


def test_zero_(rng):
    m = zero_(Pair(rng))
    assert all((p.data == 0).all() for p in m.parameters())


def test_step_lr():
    assert step_lr(0, 1e-4, 500) == 1e-4
    assert step_lr(499, 1e-4, 500) == 1e-4
    assert step_lr(1000, 1e-4, 500) == 1e-4 / 4


def _adam_reference(p, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        g = g + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_matches_scalar_reference():
    grads = [0.3, -1.2, 0.05, 2.0]
    p = Parameter(np.array([0.7]), dtype=np.float64)
    for g in grads:
        p.grad = np.array([g])
        adam_step([p], lr=1e-2, weight_decay=5e-4)
        assert p.grad is None
    assert p.data[0] == pytest.approx(_adam_reference(0.7, grads, 1e-2, 5e-4), rel=1e-12)


def test_adam_first_step_size_is_lr():
    p = Parameter(np.array([1.0, -1.0]), dtype=np.float64)
    p.grad = np.array([3.0, -0.001])
    adam_step([p], lr=0.1, weight_decay=0.0)
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-5)
