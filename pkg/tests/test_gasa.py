import itertools

import numpy as np
import pytest

from coadnet.gasa import DILATIONS, GASA, GlobalAttention, LocalContext, aggregate_block, block_shuffle
from coadnet.ops import ConfigError, ShapeError
from coadnet.tensor import Tensor


def test_dilations():
    assert DILATIONS == (1, 3, 5, 7)


def test_block_shuffle_slices_channels(rng):
    x = rng.standard_normal((3, 8, 2, 2))
    blocks = block_shuffle(Tensor(x), 4)
    assert len(blocks) == 4
    for b, blk in enumerate(blocks):
        np.testing.assert_array_equal(blk.data, x[:, 2 * b:2 * b + 2])


def test_block_shuffle_rejects_non_divisor():
    with pytest.raises(ConfigError):
        block_shuffle(Tensor(np.zeros((2, 6, 2, 2))), 4)


def test_aggregate_identical_members_is_identity(rng):
    x = rng.standard_normal((4, 2, 3, 3))
    same = np.repeat(x[:1], 4, axis=0)
    np.testing.assert_allclose(aggregate_block(Tensor(same)).data, x[0], rtol=1e-12)


def test_aggregate_lies_between_min_and_max(rng):
    x = rng.standard_normal((5, 2, 3, 3))
    g = aggregate_block(Tensor(x)).data
    assert (g <= x.max(axis=0) + 1e-12).all() and (g >= x.min(axis=0) - 1e-12).all()


def test_aggregate_requires_4d():
    with pytest.raises(ShapeError):
        aggregate_block(Tensor(np.zeros((2, 3, 3))))


def test_local_context_keeps_extent(rng):
    lc = LocalContext(8, rng)
    assert lc(Tensor(rng.standard_normal((8, 5, 5)))).shape == (8, 5, 5)
    with pytest.raises(ConfigError):
        LocalContext(6, rng)


def test_affinity_columns_sum_to_one(rng):
    ga = GlobalAttention(4, rng)
    a = ga.affinity(Tensor(rng.standard_normal((4, 3, 3)))).data
    assert a.shape == (9, 9)
    np.testing.assert_allclose(a.sum(axis=0), 1.0)


def test_gasa_shape(rng):
    g = GASA(16, 4, rng)(Tensor(rng.standard_normal((5, 16, 4, 4))))
    assert g.shape == (16, 4, 4)


def test_gasa_order_insensitive_exact(rng):
    m = GASA(16, 4, rng).astype(np.float64)
    x = rng.standard_normal((4, 16, 3, 3))
    ref = m(Tensor(x)).data
    for perm in itertools.permutations(range(4)):
        assert np.array_equal(m(Tensor(x[list(perm)])).data, ref)


def test_gasa_blocks_have_own_weights(rng):
    m = GASA(16, 4, rng)
    assert not np.array_equal(m.attn[0].query.weight.data, m.attn[1].query.weight.data)


def test_affinity_column_is_query_softmax(rng):
    ga = GlobalAttention(4, rng).astype(np.float64)
    g = rng.standard_normal((4, 2, 3))
    q = ga.query(Tensor(g)).data.reshape(4, 6)
    k = ga.key(Tensor(g)).data.reshape(4, 6)
    a = ga.affinity(Tensor(g)).data
    j = 4
    scores = k.T @ q[:, j] / 2.0
    e = np.exp(scores - scores.max())
    np.testing.assert_allclose(a[:, j], e / e.sum(), rtol=1e-12)
