import numpy as np
import pytest
from PIL import Image

from coadnet.data import (
    CATEGORIES, DataError, SynthSpec, generate, list_groups, load_dataset, load_group, quantize,
    read_map, save_dataset, shape_mask, to_loaded, write_maps,
)
from coadnet.ops import ConfigError


@pytest.fixture(scope="module")
def groups():
    return generate(SynthSpec(n_groups=4, seed=7))


def test_deterministic(groups):
    again = generate(SynthSpec(n_groups=4, seed=7))
    for a, b in zip(groups, again):
        assert a.images.tobytes() == b.images.tobytes()
        assert a.cosal_masks.tobytes() == b.cosal_masks.tobytes()
        assert a.sal_masks.tobytes() == b.sal_masks.tobytes()


def test_different_seed_differs(groups):
    other = generate(SynthSpec(n_groups=4, seed=8))
    assert groups[0].images.tobytes() != other[0].images.tobytes()


def test_cosal_subset_of_sal_and_nonempty(groups):
    for g in groups:
        assert (g.cosal_masks <= g.sal_masks).all()
        assert g.cosal_masks.reshape(len(g), -1).any(axis=1).all()


def test_distractors_in_strict_subset(groups):
    for g in groups:
        has = (g.sal_masks & ~g.cosal_masks).reshape(len(g), -1).any(axis=1)
        assert 0 < has.sum() < len(g)


def test_no_distractors_masks_equal():
    for g in generate(SynthSpec(n_groups=3, distractors=0, seed=2)):
        assert np.array_equal(g.cosal_masks, g.sal_masks)


def test_area_band_by_pixel_count(groups):
    lo, hi = SynthSpec().area_band
    for g in groups:
        for m in g.cosal_masks:
            frac = np.count_nonzero(m) / m.size
            assert lo <= frac <= hi


def test_shape_mask_categories():
    for kind in CATEGORIES:
        m = shape_mask(kind, 64, 32, 32, 12, 0.3)
        assert m.any() and not m.all()
    disc = shape_mask("disc", 64, 32, 32, 10, 0)
    assert abs(np.count_nonzero(disc) - np.pi * 100) / (np.pi * 100) < 0.05


@pytest.mark.parametrize("kwargs", [dict(canvas=60), dict(group_size=1), dict(distractors=3), dict(categories=("disc",)), dict(area_band=(0.3, 0.1))])
def test_invalid_spec(kwargs):
    with pytest.raises(ConfigError):
        generate(SynthSpec(**kwargs))


def test_save_and_load_round_trip(groups, tmp_path):
    save_dataset(groups[:2], tmp_path)
    assert [p.name for p in list_groups(tmp_path)] == [g.group_id for g in groups[:2]]
    loaded = load_dataset(tmp_path, input_size=64)
    ims, cosal, _ = groups[0].tensors()
    np.testing.assert_allclose(loaded[0].images, ims, atol=1e-6)
    np.testing.assert_array_equal(loaded[0].masks_at(64), cosal)
    np.testing.assert_array_equal(loaded[0].masks_at(64, "sal"), groups[0].tensors()[2])


def test_load_resizes_and_remembers_extent(tmp_path):
    gdir = tmp_path / "g"
    gdir.mkdir()
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)).save(gdir / "a.png")
    Image.fromarray(np.zeros((224, 224), np.uint8)).save(gdir / "a_gt.png")
    g = load_group(gdir, input_size=64)
    assert g.images.shape == (1, 3, 64, 64)
    assert g.original_sizes == [(224, 224)]
    assert g.images.min() >= 0 and g.images.max() <= 1


def test_values_scale_by_255(tmp_path):
    gdir = tmp_path / "g"
    gdir.mkdir()
    Image.fromarray(np.full((8, 8, 3), 51, np.uint8)).save(gdir / "a.png")
    g = load_group(gdir, input_size=8, require_gt=False)
    np.testing.assert_allclose(g.images, 0.2, atol=1e-7)
    assert g.masks is None


def test_pgm_supported(groups, tmp_path):
    save_dataset(groups[:1], tmp_path, ext=".pgm")
    g = load_group(tmp_path / groups[0].group_id, 64)
    assert g.images.shape == (5, 3, 64, 64)


def test_missing_ground_truth(tmp_path):
    gdir = tmp_path / "g"
    gdir.mkdir()
    Image.fromarray(np.zeros((8, 8, 3), np.uint8)).save(gdir / "a.png")
    with pytest.raises(DataError, match="a.png"):
        load_group(gdir, 8)


def test_unreadable_file_named(tmp_path):
    gdir = tmp_path / "g"
    gdir.mkdir()
    (gdir / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DataError, match="broken.png"):
        load_group(gdir, 8, require_gt=False)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_group(tmp_path / "nope")


def test_map_write_read_quantization(tmp_path, rng):
    maps = [rng.random((16, 16)) for _ in range(3)]
    paths = write_maps(maps, ["a", "b", "c"], [(16, 16)] * 3, tmp_path)
    for m, p in zip(maps, paths):
        assert np.abs(read_map(p) - m).max() <= 1 / 255


def test_write_restores_original_extent(tmp_path, rng):
    p = write_maps([rng.random((8, 8))], ["x"], [(20, 30)], tmp_path)[0]
    assert read_map(p).shape == (20, 30)


def test_quantize():
    assert quantize(np.array([0.0, 0.5, 1.0, 1.2, -0.1])).tolist() == [0, 128, 255, 255, 0]


def test_to_loaded(groups):
    lg = to_loaded(groups[0])
    assert lg.images.shape == (5, 3, 64, 64) and len(lg.masks) == 5
