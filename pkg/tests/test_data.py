import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from gansweep.data import (
    HEALTHY,
    REAL,
    SYNTHETIC,
    RATIO_ROWS,
    TUMOR,
    BlendSpec,
    ImageRecord,
    RawImage,
    SplitSpec,
    batches,
    blend,
    center_crop,
    center_crop_box,
    denormalize,
    load_dataset,
    load_dataset_root,
    load_image_dir,
    manifest_sha256,
    normalize,
    preprocess,
    save_dataset,
    split_dataset,
    train_val_split,
)
from gansweep.errors import ConfigurationError, ContractError, IngestionError

PIXELS = np.zeros((3, 64, 64), dtype=np.float32)


def make_records(n_per_class, source=REAL, prefix="r"):
    out = []
    for i in range(n_per_class):
        out.append(ImageRecord(PIXELS, TUMOR, source, f"{prefix}/t/{i}"))
        out.append(ImageRecord(PIXELS, HEALTHY, source, f"{prefix}/h/{i}"))
    return out


def uids(records):
    return {r.uid for r in records}


# -- ingestion ------------------------------------------------------------------


def _write_png(path, value=128, size=(20, 30)):
    Image.fromarray(np.full(size[::-1], value, dtype=np.uint8)).save(path)


def test_load_image_dir_reads_valid_files(tmp_path):
    for i in range(3):
        _write_png(tmp_path / f"img{i}.png")
    raws = load_image_dir(tmp_path, TUMOR)
    assert len(raws) == 3 and all(r.label == TUMOR for r in raws)
    assert raws[0].pixels.shape == (30, 20)
    assert raws[0].pixels.max() == pytest.approx(128 / 255)


def test_load_image_dir_rgb_is_converted_to_gray(tmp_path):
    Image.fromarray(np.full((8, 8, 3), 255, dtype=np.uint8)).save(tmp_path / "rgb.jpg")
    (raw,) = load_image_dir(tmp_path, HEALTHY)
    assert raw.pixels.shape == (8, 8)


def test_load_image_dir_empty_directory(tmp_path):
    with pytest.raises(IngestionError):
        load_image_dir(tmp_path, TUMOR)


def test_load_image_dir_skips_corrupt_file(tmp_path, caplog):
    _write_png(tmp_path / "a.png")
    _write_png(tmp_path / "b.png")
    (tmp_path / "c.png").write_bytes(b"definitely not a png")
    with caplog.at_level(logging.WARNING):
        raws = load_image_dir(tmp_path, TUMOR)
    assert len(raws) == 2
    assert sum("c.png" in rec.message for rec in caplog.records) == 1


def test_load_image_dir_all_corrupt(tmp_path):
    (tmp_path / "x.png").write_bytes(b"junk")
    with pytest.raises(IngestionError):
        load_image_dir(tmp_path, TUMOR)


def test_load_dataset_root_layout(tmp_path):
    for sub, n in (("yes", 2), ("no", 3)):
        (tmp_path / sub).mkdir()
        for i in range(n):
            _write_png(tmp_path / sub / f"{i}.png")
    raws = load_dataset_root(tmp_path)
    assert Counter(r.label for r in raws) == {TUMOR: 2, HEALTHY: 3}


# -- preprocessing --------------------------------------------------------------


@pytest.mark.parametrize("value,expected", [(0.5, 0.0), (0.0, -1.0), (1.0, 1.0)])
def test_uniform_intensity_maps_through_normalisation(value, expected):
    rec = preprocess(RawImage(np.full((50, 70), value, dtype=np.float32), TUMOR, "u"))
    assert rec.pixels.shape == (3, 64, 64)
    np.testing.assert_allclose(rec.pixels, expected, atol=1e-6)


def test_crop_window_for_a_100_by_80_image():
    # 100 wide, 80 high: the centered 80x80 square spans columns 10..89
    height, width = 80, 100
    assert center_crop_box(height, width) == (0, 10, 80)
    cols = np.tile(np.arange(width, dtype=np.float32), (height, 1))
    cropped = center_crop(cols)
    assert cropped.shape == (80, 80)
    np.testing.assert_array_equal(cropped[0], np.arange(10, 90))


def test_preprocess_ignores_pixels_outside_the_crop():
    # everything inside the crop window is mid-grey, everything outside is white;
    # any leakage from the excluded columns would move the output off zero
    img = np.ones((80, 100), dtype=np.float32)
    img[:, 10:90] = 0.5
    rec = preprocess(RawImage(img, HEALTHY, "crop"))
    np.testing.assert_allclose(rec.pixels, 0.0, atol=1e-6)


def test_preprocess_tall_image_crops_rows():
    img = np.ones((100, 80), dtype=np.float32)
    img[10:90, :] = 0.0
    np.testing.assert_allclose(preprocess(RawImage(img, HEALTHY, "tall")).pixels, -1.0, atol=1e-6)


def test_zero_dimension_image_is_rejected():
    with pytest.raises(IngestionError):
        preprocess(RawImage(np.zeros((0, 5), dtype=np.float32), TUMOR, "empty"))


@given(arrays(np.float32, st.tuples(st.integers(1, 40), st.integers(1, 40)), elements=st.floats(0, 1, width=32)))
def test_preprocess_output_contract(img):
    rec = preprocess(RawImage(img, TUMOR, "h"))
    assert rec.pixels.shape == (3, 64, 64)
    assert rec.pixels.min() >= -1.0 and rec.pixels.max() <= 1.0
    np.testing.assert_array_equal(rec.pixels[0], rec.pixels[1])
    np.testing.assert_array_equal(rec.pixels[1], rec.pixels[2])


@given(arrays(np.float64, 16, elements=st.floats(0, 1)))
def test_normalisation_round_trip(x):
    np.testing.assert_allclose(denormalize(normalize(x)), x, atol=1e-7)


# -- splitting ------------------------------------------------------------------


def test_split_sizes_balance_and_disjointness():
    records = make_records(1500)
    splits = split_dataset(records, SplitSpec(1000, 1500, 500, seed=3))
    for part, size in ((splits.cnn_pool, 1000), (splits.gan_train, 1500), (splits.test, 500)):
        assert len(part) == size
        assert Counter(r.label for r in part) == {TUMOR: size // 2, HEALTHY: size // 2}
    assert not uids(splits.cnn_pool) & uids(splits.test)
    assert not uids(splits.gan_train) & uids(splits.test)
    assert not uids(splits.cnn_pool) & uids(splits.gan_train)


def test_split_shortfall_is_named():
    with pytest.raises(ConfigurationError, match="short by"):
        split_dataset(make_records(100), SplitSpec(150, None, 100))
    with pytest.raises(ConfigurationError, match="short by"):
        split_dataset(make_records(1500), SplitSpec(1000, 2000, 500))


def test_split_is_deterministic():
    records = make_records(400)
    a = split_dataset(records, SplitSpec(200, 100, 100, seed=5))
    b = split_dataset(records, SplitSpec(200, 100, 100, seed=5))
    assert [r.uid for r in a.test] == [r.uid for r in b.test]
    assert [r.uid for r in a.gan_train] == [r.uid for r in b.gan_train]


def test_split_overlap_only_on_request():
    records = make_records(400)
    spec = SplitSpec(600, 600, 100, seed=1, allow_overlap=True)
    splits = split_dataset(records, spec)
    assert uids(splits.cnn_pool) & uids(splits.gan_train)
    assert not (uids(splits.cnn_pool) | uids(splits.gan_train)) & uids(splits.test)


@given(st.integers(0, 2**32 - 1))
def test_test_set_never_overlaps_training_pools(seed):
    splits = split_dataset(make_records(120), SplitSpec(100, None, 40, seed=seed))
    assert not uids(splits.cnn_pool) & uids(splits.test)
    assert not uids(splits.gan_train) & uids(splits.test)


# -- blending -------------------------------------------------------------------


@pytest.fixture(scope="module")
def pools():
    return make_records(500, REAL, "real"), make_records(500, SYNTHETIC, "gan")


def test_table_rows():
    assert [r.label for r in RATIO_ROWS] == [f"{1000 - 100 * i}:{100 * i}" for i in range(11)]
    assert RATIO_ROWS[1].description == "10% GAN, 90% Real"
    assert RATIO_ROWS[-1].description == "100% GAN, 0% Real"


@pytest.mark.parametrize("spec", RATIO_ROWS, ids=lambda s: s.label)
def test_blend_counts_match_each_row(pools, spec):
    dataset = blend(*pools, spec, seed=0)
    counts = Counter(r.source for r in dataset)
    assert len(dataset) == 1000
    assert counts[REAL] == spec.real_count and counts[SYNTHETIC] == spec.gan_count
    for source, n in ((REAL, spec.real_count), (SYNTHETIC, spec.gan_count)):
        labels = Counter(r.label for r in dataset if r.source == source)
        assert abs(labels[TUMOR] - labels[HEALTHY]) <= n % 2


def test_blend_is_deterministic(pools):
    a = blend(*pools, BlendSpec(700, 300), seed=4)
    b = blend(*pools, BlendSpec(700, 300), seed=4)
    assert [r.uid for r in a] == [r.uid for r in b]


def test_blend_shortfall(pools):
    real, _ = pools
    with pytest.raises(ConfigurationError, match="synthetic"):
        blend(real, make_records(10, SYNTHETIC), BlendSpec(900, 100), seed=0)


@pytest.mark.parametrize("real,gan", [(900, 0), (500, 600), (-100, 1100)])
def test_blend_spec_must_sum_to_1000(real, gan):
    with pytest.raises(ConfigurationError):
        BlendSpec(real, gan)


def test_train_val_split(pools):
    dataset = blend(*pools, BlendSpec(900, 100), seed=1)
    train, val = train_val_split(dataset, seed=2)
    assert (len(train), len(val)) == (800, 200)
    assert not uids(train) & uids(val)
    assert Counter(r.label for r in train) == {TUMOR: 400, HEALTHY: 400}
    assert Counter(r.label for r in val) == {TUMOR: 100, HEALTHY: 100}
    other, _ = train_val_split(dataset, seed=3)
    assert [r.uid for r in train] != [r.uid for r in other]
    with pytest.raises(ContractError):
        train_val_split(dataset[:999], seed=0)


# -- batching -------------------------------------------------------------------


def test_batch_sizes():
    records = make_records(500)
    sizes = [len(x) for x, _, _ in batches(records, 64, seed=0).epoch()]
    assert sizes == [64] * 15 + [40]
    assert [len(x) for x, _, _ in batches(records, 1000, seed=0).epoch()] == [1000]


def test_epoch_covers_dataset_exactly_once():
    records = make_records(50)
    it = batches(records, 7, seed=3)
    seen = np.concatenate([idx for _, _, idx in it.epoch()])
    assert sorted(seen.tolist()) == list(range(100))


def test_batches_are_seeded_and_reshuffled():
    records = make_records(50)
    first = [idx.tolist() for _, _, idx in batches(records, 10, seed=1).epoch()]
    again = [idx.tolist() for _, _, idx in batches(records, 10, seed=1).epoch()]
    assert first == again
    it = batches(records, 10, seed=1)
    e1 = [idx.tolist() for _, _, idx in it.epoch()]
    e2 = [idx.tolist() for _, _, idx in it.epoch()]
    assert e1 != e2


def test_batch_targets_follow_labels():
    records = make_records(5)
    for x, y, idx in batches(records, 4, seed=0).epoch():
        assert y.tolist() == [1.0 if records[i].label == TUMOR else 0.0 for i in idx]
        assert x.shape[1:] == (3, 64, 64)


def test_empty_dataset_cannot_be_batched():
    with pytest.raises(ContractError):
        batches([], 64)


# -- serialization --------------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    records = [ImageRecord(rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32), TUMOR, SYNTHETIC, f"s/{i}") for i in range(3)]
    save_dataset(records, tmp_path / "pool", "synthetic")
    loaded, split = load_dataset(tmp_path / "pool")
    assert split == "synthetic"
    assert [(r.uid, r.label, r.source) for r in loaded] == [(r.uid, r.label, r.source) for r in records]
    for a, b in zip(records, loaded):
        np.testing.assert_array_equal(a.pixels, b.pixels)
    assert manifest_sha256(loaded, "x") == manifest_sha256(records, "x")
