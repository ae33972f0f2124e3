"""Synthetic dataset generator, separability oracle, raster I/O, dataset trees."""

import numpy as np
import pytest

from lnlatten.data import (augment_batch, crucial_cell_mask,
                           default_crucial_cells, load_dataset_tree,
                           nearest_centroid_accuracy, read_raster,
                           synth_dataset, write_dataset_tree, write_raster)
from lnlatten.errors import ConfigurationError, DataError
from lnlatten.local_ensemble import plan_patches

LAYOUT = plan_patches(48, 9, overlap_ratio=0.3)


def test_same_seed_is_bitwise_identical():
    a = synth_dataset(3, 10, seed=7, layout=LAYOUT)
    b = synth_dataset(3, 10, seed=7, layout=LAYOUT)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    c = synth_dataset(3, 10, seed=8, layout=LAYOUT)
    assert not np.array_equal(a.images, c.images)


def test_shapes_labels_and_value_range():
    ds = synth_dataset(4, 6, seed=0, layout=LAYOUT, channels=1)
    assert ds.images.shape == (24, 48, 48, 1)
    assert ds.images.dtype == np.float32
    assert set(ds.labels.tolist()) == {0, 1, 2, 3}
    assert np.bincount(ds.labels).tolist() == [6, 6, 6, 6]
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_default_crucial_cells_are_middle_column():
    assert default_crucial_cells(3) == (1, 4, 7)
    assert default_crucial_cells(4) == (2, 6, 10)


def test_nearest_centroid_separability():
    train = synth_dataset(3, 60, seed=1, layout=LAYOUT)
    test = synth_dataset(3, 30, seed=2, layout=LAYOUT,
                         crucial_cells=train.crucial_cells)
    mask = crucial_cell_mask(LAYOUT, train.crucial_cells)
    assert nearest_centroid_accuracy(train, test, cell_mask=mask) >= 0.95


def test_zero_noise_templates_differ_only_in_crucial_cells():
    a = synth_dataset(2, 1, seed=3, layout=LAYOUT, distractor_level=0.0,
                      noise_sigma=0.0)
    ia = a.images[a.labels == 0][0][..., 0]
    ib = a.images[a.labels == 1][0][..., 0]
    diff = np.abs(ia - ib) > 1e-6
    mask = crucial_cell_mask(LAYOUT, a.crucial_cells)[..., 0]
    assert diff.any()
    assert not (diff & ~mask).any()      # all differences inside planted cells


def test_class_count_limits():
    with pytest.raises(ConfigurationError):
        synth_dataset(1, 5, seed=0, layout=LAYOUT)
    with pytest.raises(ConfigurationError):
        synth_dataset(99, 5, seed=0, layout=LAYOUT)


def test_augment_flip_preserves_crucial_column_and_shape():
    ds = synth_dataset(2, 8, seed=4, layout=LAYOUT)
    rng = np.random.default_rng(0)
    out = augment_batch(ds.images, rng, horizontal_flip=True, random_crop=True)
    assert out.shape == ds.images.shape
    assert out.dtype == ds.images.dtype
    # deterministic under a fixed rng state
    out2 = augment_batch(ds.images, np.random.default_rng(0),
                         horizontal_flip=True, random_crop=True)
    assert np.array_equal(out, out2)


def test_augment_patch_blank_overwrites_one_cell():
    ds = synth_dataset(2, 8, seed=5, layout=LAYOUT)
    rng = np.random.default_rng(1)
    out = augment_batch(ds.images, rng, horizontal_flip=False,
                        random_crop=False, patch_blank_fraction=1.0,
                        layout=LAYOUT)
    p = LAYOUT.patch_size
    cells = LAYOUT.cells()
    for i in range(len(out)):
        changed = [ci for ci, (r, c) in enumerate(cells)
                   if not np.array_equal(out[i, r:r+p, c:c+p],
                                         ds.images[i, r:r+p, c:c+p])]
        assert len(changed) >= 1
        r, c = cells[changed[0]]
        blanked = out[i, r:r+p, c:c+p]
        assert blanked.min() >= 0.0 and blanked.max() <= 1.0
    # fraction 0 with no other augmentation returns the input untouched
    same = augment_batch(ds.images, rng, horizontal_flip=False,
                         random_crop=False, patch_blank_fraction=0.0)
    assert np.array_equal(same, ds.images)
    with pytest.raises(DataError):
        augment_batch(ds.images, rng, horizontal_flip=False,
                      random_crop=False, patch_blank_fraction=0.5)


def test_raster_roundtrip_gray_and_rgb(tmp_path):
    rng = np.random.default_rng(5)
    gray = rng.random((20, 20, 1)).astype(np.float32)
    rgb = rng.random((16, 16, 3)).astype(np.float32)
    pg, pp = tmp_path / "a.pgm", tmp_path / "b.ppm"
    write_raster(pg, gray)
    write_raster(pp, rgb)
    got_g, got_r = read_raster(pg), read_raster(pp)
    assert got_g.shape == gray.shape and got_r.shape == rgb.shape
    # 8-bit quantization bound
    assert np.abs(got_g - gray).max() <= 1.0 / 255.0 + 1e-6
    assert np.abs(got_r - rgb).max() <= 1.0 / 255.0 + 1e-6
    # a second write-read is exact (values already quantized)
    write_raster(pg, got_g)
    assert np.array_equal(read_raster(pg), got_g)


def test_malformed_rasters_rejected(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P9\n4 4\n255\n" + bytes(16))
    with pytest.raises(DataError):
        read_raster(bad)
    trunc = tmp_path / "trunc.pgm"
    trunc.write_bytes(b"P5\n8 8\n255\n" + bytes(10))
    with pytest.raises(DataError):
        read_raster(trunc)


def test_dataset_tree_roundtrip(tmp_path):
    ds = synth_dataset(3, 4, seed=6, layout=LAYOUT)
    root = tmp_path / "tree"
    write_dataset_tree(ds, root)
    back = load_dataset_tree(root, 48, 1)
    assert len(back) == len(ds)
    assert back.crucial_cells == ds.crucial_cells
    assert np.bincount(back.labels).tolist() == [4, 4, 4]
    # loader sorts by class dir then filename: per-class pixel multisets match
    for lbl in range(3):
        a = np.sort(ds.images[ds.labels == lbl], axis=0)
        b = np.sort(back.images[back.labels == lbl], axis=0)
        assert np.abs(a - b).max() <= 1.0 / 255.0 + 1e-6


def test_dataset_tree_validation(tmp_path):
    ds = synth_dataset(2, 2, seed=7, layout=LAYOUT)
    root = tmp_path / "tree"
    write_dataset_tree(ds, root)
    with pytest.raises(DataError, match="expects 64x64"):
        load_dataset_tree(root, 64, 1)
    with pytest.raises(DataError, match="channels"):
        load_dataset_tree(root, 48, 3)
    with pytest.raises(DataError, match="not a directory"):
        load_dataset_tree(tmp_path / "missing", 48, 1)
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError, match="no class subdirectories"):
        load_dataset_tree(tmp_path / "empty", 48, 1)
