# tests/test_data.py

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from data.dataset import (
    compute_norm_stats,
    denormalize_score,
    load_dataset,
    normalize_score,
    read_labels,
    select,
    split_train_val,
)
from data.loader import batch_indices, eval_transform, iterate_batches, train_transform
from data.ppm import decode_ppm, encode_ppm, load_image, write_ppm
from data.synth import load_synth, oracle_score, save_synth, synth_dataset
from data.transforms import AugmentParams, apply_augment, center_crop, resize_bilinear
from errors import DataError
from nn.tensor import Rng
from state import AugmentConfig, NormStats


def _write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# === labels CSV ===

def test_read_labels(tmp_path):
    path = _write_csv(tmp_path / "labels.csv", "filename,score\na.ppm,1.5\nb.ppm,5\n")
    assert read_labels(path) == [("a.ppm", 1.5), ("b.ppm", 5.0)]


@pytest.mark.parametrize(
    "text,match",
    [
        ("name,score\na.ppm,2\n", "header"),
        ("filename,score\na.ppm,2\nb.ppm,6.5\n", "row 3"),
        ("filename,score\na.ppm,abc\n", "not a number"),
        ("filename,score\na.ppm,2\na.ppm,3\n", "duplicate"),
        ("filename,score\n", "no rows"),
    ],
)
def test_read_labels_rejects(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        read_labels(_write_csv(tmp_path / "labels.csv", text))


def test_read_labels_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_labels(tmp_path / "absent.csv")


def test_load_dataset_and_missing_image(tmp_path):
    image = np.full((3, 4, 5), 0.5, np.float32)
    write_ppm(tmp_path / "a.ppm", image)
    write_ppm(tmp_path / "b.ppm", image)
    csv = _write_csv(tmp_path / "labels.csv", "filename,score\na.ppm,2\nb.ppm,4\n")
    samples, stats = load_dataset(tmp_path, csv)
    assert [s.filename for s in samples] == ["a.ppm", "b.ppm"]
    assert (stats.train_min, stats.train_max) == (2.0, 4.0)
    assert [s.score_norm for s in samples] == [0.0, 1.0]
    assert samples[0].image.shape == (3, 4, 5)

    _write_csv(csv, "filename,score\na.ppm,2\nc.ppm,4\n")
    with pytest.raises(DataError, match="row 3"):
        load_dataset(tmp_path, csv)


# === PPM ===

def test_ppm_decode_with_comment():
    buf = b"P6\n# made by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    image = decode_ppm(buf)
    assert image.shape == (3, 1, 2) and image.dtype == np.float32
    assert_array_equal(image[:, 0, 0], [1.0, 0.0, 0.0])
    assert_array_equal(image[:, 0, 1], [0.0, 0.0, 1.0])


def test_ppm_encode_quantizes_to_bytes():
    image = np.array([0.0, 0.5, 1.0], np.float32).reshape(3, 1, 1)
    assert_allclose(decode_ppm(encode_ppm(image))[:, 0, 0], [0.0, 128 / 255, 1.0])


@pytest.mark.parametrize(
    "buf",
    [
        b"P3\n1 1\n255\n" + bytes(3),
        b"P6\n2 2\n255\n" + bytes(5),
        b"P6\n1 1\n65535\n" + bytes(6),
        b"P6\n1",
    ],
)
def test_ppm_rejects(buf):
    with pytest.raises(DataError):
        decode_ppm(buf)


def test_load_image_missing(tmp_path):
    with pytest.raises(DataError):
        load_image(tmp_path / "nope.ppm")


# === transforms ===

def test_resize_preserves_constants_and_corners(rng):
    assert_allclose(resize_bilinear(np.full((3, 5, 7), 0.25), 9, 4), 0.25)
    image = rng.uniform_tensor((3, 6, 6), 0.0, 1.0, precision="f64")
    out = resize_bilinear(image, 11, 11)
    assert out.shape == (3, 11, 11)
    assert_allclose(out[:, 0, 0], image[:, 0, 0])
    assert_allclose(out[:, -1, -1], image[:, -1, -1])
    assert_allclose(resize_bilinear(image, 6, 6), image)


def test_identity_augment_is_center_crop_of_resize(rng):
    cfg = AugmentConfig(resize_to=36, crop_to=32)
    image = rng.uniform_tensor((3, 40, 40), 0.0, 1.0)
    out = apply_augment(image, cfg, AugmentParams.identity(cfg))
    assert_array_equal(out, center_crop(resize_bilinear(image, 36, 36), 32))


def test_train_transform_is_keyed_by_seed_epoch_and_index(synth_samples):
    cfg = AugmentConfig(resize_to=36, crop_to=32)
    sample = synth_samples[0]
    first = train_transform(cfg, seed=7, epoch=1)(sample, 0)
    assert first.shape == (3, 32, 32)
    assert_array_equal(train_transform(cfg, seed=7, epoch=1)(sample, 0), first)
    assert not np.array_equal(train_transform(cfg, seed=7, epoch=2)(sample, 0), first)


def test_eval_transform_resizes_without_crop(synth_samples):
    out = eval_transform(16)(synth_samples[0], 0)
    assert out.shape == (3, 16, 16)


# === scores and splits ===

def test_score_normalization_is_invertible():
    stats = NormStats(1.5, 4.5)
    assert normalize_score(1.5, stats) == 0.0
    assert normalize_score(4.5, stats) == 1.0
    assert denormalize_score(normalize_score(3.2, stats), stats) == pytest.approx(3.2, abs=1e-12)
    with pytest.raises(DataError):
        compute_norm_stats([3.0, 3.0])
    with pytest.raises(DataError):
        compute_norm_stats([])


def test_split_train_val(synth_samples):
    train, val = split_train_val(synth_samples, 0.25, seed=1)
    assert len(val) == 3 and len(train) == 9
    names = {s.filename for s in train} | {s.filename for s in val}
    assert len(names) == 12
    again_train, again_val = split_train_val(synth_samples, 0.25, seed=1)
    assert [s.filename for s in again_val] == [s.filename for s in val]
    assert [s.filename for s in train] == sorted(s.filename for s in train)
    with pytest.raises(DataError):
        split_train_val(synth_samples[:1], 0.5, seed=1)


def test_select_keeps_requested_order(synth_samples):
    names = [synth_samples[3].filename, synth_samples[0].filename]
    assert [s.filename for s in select(synth_samples, names)] == names
    with pytest.raises(DataError):
        select(synth_samples, ["missing.ppm"])


def test_batches_keep_the_partial_tail():
    sizes = [len(b) for b in batch_indices(10, 4)]
    assert sizes == [4, 4, 2]
    shuffled = np.concatenate(batch_indices(10, 4, Rng(0).derive("shuffle", 1)))
    assert sorted(shuffled.tolist()) == list(range(10))
    with pytest.raises(DataError):
        batch_indices(0, 4)


def test_iterate_batches_collates_targets(synth_samples):
    batches = list(iterate_batches(synth_samples, 5, eval_transform(32), precision="f64"))
    assert [b.images.shape[0] for b in batches] == [5, 5, 2]
    assert batches[0].images.dtype == np.float64
    assert_array_equal(batches[0].targets, [s.score_norm for s in synth_samples[:5]])


# === synthetic data ===

def test_synth_is_deterministic_and_scores_follow_the_oracle():
    a = synth_dataset(6, 16, seed=2)
    b = synth_dataset(6, 16, seed=2)
    for sa, sb, p in zip(a.samples, b.samples, a.params):
        assert_array_equal(sa.image, sb.image)
        assert sa.score_raw == oracle_score(p.symmetry, p.smoothness, p.spacing)
        assert 1.0 <= sa.score_raw <= 5.0
        assert sa.image.shape == (3, 16, 16)
        assert 0.0 <= sa.image.min() and sa.image.max() <= 1.0
    assert synth_dataset(6, 16, seed=3).samples[0].score_raw != a.samples[0].score_raw


def test_oracle_extremes():
    assert oracle_score(0.0, 0.0, 0.0) == 1.0
    assert oracle_score(1.0, 1.0, 1.0) == pytest.approx(5.0)


def test_synth_save_load(tmp_path):
    dataset = synth_dataset(4, 16, seed=5)
    manifest = save_synth(dataset, tmp_path / "one")
    save_synth(dataset, tmp_path / "two")
    for name in ("manifest.json", "labels.csv", "images.mtns", "generator_params.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    loaded = load_synth(manifest)
    assert [s.filename for s in loaded.samples] == [s.filename for s in dataset.samples]
    for a, b in zip(loaded.samples, dataset.samples):
        assert_array_equal(a.image, b.image)
        assert a.score_raw == b.score_raw
    assert read_labels(tmp_path / "one" / "labels.csv")[0][0] == "synth_00000.ppm"


def test_synth_rejects_bad_sizes(tmp_path):
    with pytest.raises(DataError):
        synth_dataset(0, 16, seed=0)
    with pytest.raises(DataError):
        synth_dataset(2, 4, seed=0)
    with pytest.raises(DataError):
        load_synth(tmp_path)
