"""Property-based checks."""
import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from coadnet import ops
from coadnet.ggd import gated_combine
from coadnet.metrics import f_measure, mae, pr_curve
from coadnet.model import joint_loss
from coadnet.tensor import Tensor

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)
unit = st.floats(0, 1, allow_nan=False, width=64)


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=unit))
def test_gate_stays_between_inputs(g, u, p):
    x = gated_combine(Tensor(p), Tensor(g), Tensor(u)).data
    assert (x >= np.minimum(g, u)).all() and (x <= np.maximum(g, u)).all()


@given(arrays(np.float64, (4, 2, 3), elements=finite), st.permutations(range(4)))
def test_softmax_pool_order_invariant(x, perm):
    assert np.array_equal(ops.softmax_pool(Tensor(x), 0).data, ops.softmax_pool(Tensor(x[list(perm)]), 0).data)


@given(arrays(np.float64, (5, 3), elements=finite))
def test_softmax_is_distribution(x):
    s = ops.softmax(Tensor(x), 0).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=0), 1.0)


@given(arrays(np.float64, (2, 1, 3, 3), elements=unit), arrays(np.bool_, (2, 1, 3, 3)))
def test_loss_finite_and_nonnegative(p, t):
    v = float(joint_loss(Tensor(p), t.astype(np.float64), Tensor(p), t.astype(np.float64)).data)
    assert np.isfinite(v) and v >= 0


@given(arrays(np.float64, (6, 6), elements=unit), arrays(np.bool_, (6, 6)))
def test_metric_ranges(m, gt):
    assert 0 <= mae(m, gt) <= 1
    if gt.any():
        assert 0 <= f_measure(m, gt) <= 1
        curve = pr_curve([m], [gt])
        assert ((curve >= 0) & (curve <= 1)).all()
        assert (np.diff(curve[:, 1]) <= 0).all()


@given(arrays(np.float64, (6, 6), elements=unit), arrays(np.bool_, (6, 6)), st.floats(0.2, 1.0))
def test_f_measure_invariant_to_scaling(m, gt, k):
    # a positive scale moves the adaptive threshold with the map, so the binarization is unchanged
    if not gt.any() or m.mean() == 0:
        return
    t1, t2 = min(2 * m.mean(), 1), min(2 * (k * m).mean(), 1)
    if not np.array_equal(m >= t1, k * m >= t2):
        return
    assert f_measure(m, gt) == f_measure(k * m, gt)


@given(st.integers(1, 3), st.integers(2, 5), st.integers(1, 2))
def test_conv_transpose_extent(cin, size, cout):
    x = Tensor(np.ones((cin, size, size)))
    w = Tensor(np.ones((cin, cout, 4, 4)))
    assert ops.conv_transpose2d(x, w, None, 2, 1).shape == (cout, 2 * size, 2 * size)
