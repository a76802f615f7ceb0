import struct

import numpy as np
import pytest

from embedsafe.errors import (
    ConsistencyError,
    IdxFormatError,
    IdxLengthError,
    ParameterError,
    SamplingError,
)
from embedsafe.mnist_data import (
    Dataset,
    filter_by_classes,
    load_idx,
    quantize_to_bytes,
    read_pgm,
    sample_triplets,
    save_idx,
    subsample,
    write_pgm,
)


_counter = iter(range(1000))


def write_raw_idx(tmp_path, pixels, labels, image_magic=0x803, label_magic=0x801):
    """Independent writer: struct-packed headers, no embedsafe code."""
    n, rows, cols = pixels.shape
    k = next(_counter)
    ip = tmp_path / f"imgs{k}.idx"
    lp = tmp_path / f"labs{k}.idx"
    ip.write_bytes(struct.pack(">IIII", image_magic, n, rows, cols) + pixels.tobytes())
    lp.write_bytes(struct.pack(">II", label_magic, len(labels)) + bytes(labels))
    return str(ip), str(lp)


def test_load_idx_scales_by_255(tmp_path):
    pixels = np.array([[[0, 51], [102, 255]], [[255, 0], [10, 20]]], dtype=np.uint8)
    ip, lp = write_raw_idx(tmp_path, pixels, [3, 7])
    ds = load_idx(ip, lp)
    assert len(ds) == 2
    assert ds.images.shape == (2, 2, 2, 1)
    assert ds.images.dtype == np.float32
    assert ds.images[0, 0, 1, 0] == pytest.approx(51 / 255)
    assert ds.images[0, 1, 1, 0] == pytest.approx(1.0)
    assert list(ds.labels) == [3, 7]


def test_load_idx_wrong_magic(tmp_path):
    pixels = np.zeros((8, 2, 2), dtype=np.uint8)
    ip, lp = write_raw_idx(tmp_path, pixels, list(range(8)))
    with pytest.raises(IdxFormatError):
        load_idx(lp, lp)  # labels file passed as images file
    ip_bad, _ = write_raw_idx(tmp_path, pixels, list(range(8)), image_magic=0x804)
    with pytest.raises(IdxFormatError):
        load_idx(ip_bad, lp)


def test_load_idx_truncated(tmp_path):
    ip = tmp_path / "trunc.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, 10, 28, 28) + b"\x00" * 100)
    lp = tmp_path / "labs.idx"
    lp.write_bytes(struct.pack(">II", 0x801, 10) + b"\x00" * 10)
    with pytest.raises(IdxLengthError):
        load_idx(str(ip), str(lp))


def test_load_idx_count_mismatch(tmp_path):
    pixels = np.zeros((3, 2, 2), dtype=np.uint8)
    ip, _ = write_raw_idx(tmp_path, pixels, [0, 1, 2])
    _, lp = write_raw_idx(tmp_path, pixels[:2], [0, 1])
    with pytest.raises(ConsistencyError):
        load_idx(ip, lp)


def test_idx_round_trip_bit_identical(tmp_path, micro_corpus):
    ds = load_idx(micro_corpus["images_path"], micro_corpus["labels_path"])
    out_i = str(tmp_path / "out-images.idx")
    out_l = str(tmp_path / "out-labels.idx")
    save_idx(ds, out_i, out_l)
    assert open(out_i, "rb").read() == open(micro_corpus["images_path"], "rb").read()
    assert open(out_l, "rb").read() == open(micro_corpus["labels_path"], "rb").read()


def test_quantize_round_half_away_from_zero():
    vals = np.array([0.0, 0.5 / 255, 1.4 / 255, 1.5 / 255, 1.0])
    assert list(quantize_to_bytes(vals)) == [0, 1, 1, 2, 255]


def make_tiny_dataset(counts):
    """counts: {label: n_images}; images are distinct constants."""
    images, labels = [], []
    v = 0.0
    for lab, n in counts.items():
        for _ in range(n):
            images.append(np.full((28, 28, 1), v, dtype=np.float32))
            v += 0.001
            labels.append(lab)
    return Dataset(images=np.stack(images), labels=np.array(labels, dtype=np.uint8))


class TestSampleTriplets:
    def test_forced_assignment(self):
        ds = make_tiny_dataset({0: 2, 1: 1})
        (t,) = sample_triplets(ds, 1, seed=7)
        assert t.anchor_label == 0
        assert t.negative_label == 1
        assert not np.array_equal(t.anchor, t.positive)

    def test_n_zero(self, small_train):
        assert sample_triplets(small_train, 0, seed=0) == []

    def test_single_class_fails(self):
        ds = make_tiny_dataset({4: 5})
        with pytest.raises(SamplingError):
            sample_triplets(ds, 1, seed=0)

    def test_no_pairable_class_fails(self):
        ds = make_tiny_dataset({0: 1, 1: 1})
        with pytest.raises(SamplingError):
            sample_triplets(ds, 1, seed=0)

    def test_deterministic(self, small_train):
        a = sample_triplets(small_train, 50, seed=42)
        b = sample_triplets(small_train, 50, seed=42)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.anchor, tb.anchor)
            assert np.array_equal(ta.positive, tb.positive)
            assert np.array_equal(ta.negative, tb.negative)

    def test_invariants_over_seeds(self, small_train):
        for seed in range(30):
            for t in sample_triplets(small_train, 20, seed=seed):
                assert t.anchor_label != t.negative_label
                assert not np.array_equal(t.anchor, t.positive)


class TestFilterByClasses:
    def test_subset(self, small_train):
        out = filter_by_classes(small_train, {1, 2, 3})
        assert set(np.unique(out.labels)) == {1, 2, 3}
        wanted = np.isin(small_train.labels, [1, 2, 3])
        assert np.array_equal(out.images, small_train.images[wanted])

    def test_all_classes_is_identity(self, small_train):
        out = filter_by_classes(small_train, set(range(10)))
        assert np.array_equal(out.images, small_train.images)
        assert np.array_equal(out.labels, small_train.labels)

    def test_missing_class_gives_empty(self, small_train):
        only_sevens = filter_by_classes(small_train, {7})
        none = filter_by_classes(only_sevens, {3})
        assert len(none) == 0


def test_subsample_seeded(small_train):
    a = subsample(small_train, 0.25, seed=9)
    b = subsample(small_train, 0.25, seed=9)
    assert len(a) == int(np.ceil(0.25 * len(small_train)))
    assert np.array_equal(a.images, b.images)
    with pytest.raises(ParameterError):
        subsample(small_train, 0.0, seed=0)
    with pytest.raises(ParameterError):
        subsample(small_train, 1.5, seed=0)


def test_pgm_round_trip(tmp_path, small_train):
    img = small_train.images[0]
    path = str(tmp_path / "digit.pgm")
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.shape == img.shape
    assert np.array_equal(quantize_to_bytes(back), quantize_to_bytes(img))
    header = open(path, "rb").read(15)
    assert header.startswith(b"P5\n28 28\n255\n")


def test_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "nope.pgm"
    p.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 12)
    with pytest.raises(IdxFormatError):
        read_pgm(str(p))
