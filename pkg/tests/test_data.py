"""Byte-level CIFAR fixtures, superclass table checks, blob properties."""

import numpy as np
import pytest

from fedgtea.data import (
    CIFAR100_COARSE_NAMES,
    CIFAR100_FINE_NAMES,
    CIFAR100_FINE_TO_COARSE,
    denormalize_pixels,
    fine_to_coarse_map,
    load_cifar10,
    load_cifar100,
    make_blobs,
    normalize_pixels,
    parse_cifar10_file,
    parse_cifar100_file,
    superclass_tasks,
)
from fedgtea.errors import DataFormatError


def cifar10_record(label, pixel_fn):
    pixels = np.fromfunction(pixel_fn, (3072,), dtype=np.int64) % 256
    return bytes([label]) + bytes(pixels.astype(np.uint8).tolist())


def test_cifar10_fixture_round_trip(tmp_path):
    rec0 = cifar10_record(3, lambda i: i)
    rec1 = cifar10_record(9, lambda i: 7 * i + 11)
    path = tmp_path / "batch.bin"
    path.write_bytes(rec0 + rec1)
    images, labels = parse_cifar10_file(path)
    assert images.shape == (2, 32, 32, 3)
    np.testing.assert_array_equal(labels, [3, 9])
    # plane layout: first 1024 bytes are the red channel, row-major
    assert images[0, 0, 0, 0] == normalize_pixels(np.uint8(0))
    assert images[0, 0, 1, 0] == normalize_pixels(np.uint8(1))
    assert images[0, 0, 0, 1] == normalize_pixels(np.uint8(0))   # G plane byte 1024
    assert images[0, 0, 1, 1] == normalize_pixels(np.uint8(1025 % 256))
    # byte-exact round trip through [-1, 1]
    raw = np.frombuffer(rec0[1:] + rec1[1:], dtype=np.uint8)
    recovered = denormalize_pixels(
        images.transpose(0, 3, 1, 2).reshape(-1))
    np.testing.assert_array_equal(recovered, raw)


def test_cifar10_all_zero_pixels_map_to_minus_one(tmp_path):
    path = tmp_path / "zero.bin"
    path.write_bytes(bytes([5]) + bytes(3072))
    images, labels = parse_cifar10_file(path)
    np.testing.assert_array_equal(images, -1.0)
    assert labels[0] == 5


def test_cifar10_rejects_truncation_and_bad_labels(tmp_path):
    path = tmp_path / "broken.bin"
    path.write_bytes(cifar10_record(1, lambda i: i)[:-10])
    with pytest.raises(DataFormatError):
        parse_cifar10_file(path)
    path.write_bytes(cifar10_record(11, lambda i: i))
    with pytest.raises(DataFormatError):
        parse_cifar10_file(path)


def test_cifar100_fixture_and_directory_load(tmp_path):
    def rec(coarse, fine, base):
        pixels = ((np.arange(3072) + base) % 256).astype(np.uint8)
        return bytes([coarse, fine]) + pixels.tobytes()

    (tmp_path / "train.bin").write_bytes(rec(4, 0, 0) + rec(1, 1, 3))
    (tmp_path / "test.bin").write_bytes(rec(14, 2, 5))
    bundle = load_cifar100(tmp_path)
    np.testing.assert_array_equal(bundle.train.labels, [0, 1])
    np.testing.assert_array_equal(bundle.train.coarse_labels, [4, 1])
    np.testing.assert_array_equal(bundle.test.labels, [2])
    mapping = fine_to_coarse_map(bundle.train)
    assert mapping == {0: 4, 1: 1}
    assert mapping[0] == CIFAR100_FINE_TO_COARSE[0]


def test_cifar100_rejects_conflicting_coarse(tmp_path):
    def rec(coarse, fine):
        return bytes([coarse, fine]) + bytes(3072)

    (tmp_path / "train.bin").write_bytes(rec(4, 0) + rec(5, 0))
    (tmp_path / "test.bin").write_bytes(rec(4, 0))
    bundle = load_cifar100(tmp_path)
    with pytest.raises(DataFormatError):
        fine_to_coarse_map(bundle.train)


def test_cifar10_directory_loader(tmp_path):
    rec = cifar10_record(2, lambda i: i)
    for i in range(1, 6):
        (tmp_path / f"data_batch_{i}.bin").write_bytes(rec * 3)
    (tmp_path / "test_batch.bin").write_bytes(rec * 2)
    bundle = load_cifar10(tmp_path)
    assert len(bundle.train) == 15
    assert len(bundle.test) == 2
    assert bundle.train.split == "train"


def test_superclass_table_structure():
    tasks = superclass_tasks()
    assert len(tasks) == 20
    seen = []
    for name, fines in tasks:
        assert len(fines) == 5
        seen.extend(fines)
    assert sorted(seen) == list(range(100))
    by_name = dict(tasks)
    # spot checks against the published grouping
    aquatic = {CIFAR100_FINE_NAMES[i] for i in by_name["aquatic_mammals"]}
    assert aquatic == {"beaver", "dolphin", "otter", "seal", "whale"}
    veh2 = {CIFAR100_FINE_NAMES[i] for i in by_name["vehicles_2"]}
    assert veh2 == {"lawn_mower", "rocket", "streetcar", "tank", "tractor"}
    flowers = {CIFAR100_FINE_NAMES[i] for i in by_name["flowers"]}
    assert flowers == {"orchid", "poppy", "rose", "sunflower", "tulip"}
    people = {CIFAR100_FINE_NAMES[i] for i in by_name["people"]}
    assert people == {"baby", "boy", "girl", "man", "woman"}
    trees = {CIFAR100_FINE_NAMES[i] for i in by_name["trees"]}
    assert trees == {"maple_tree", "oak_tree", "palm_tree", "pine_tree",
                     "willow_tree"}


def test_superclass_vocabulary_sizes():
    assert len(CIFAR100_FINE_NAMES) == 100
    assert len(set(CIFAR100_FINE_NAMES)) == 100
    assert len(CIFAR100_COARSE_NAMES) == 20
    counts = np.bincount(CIFAR100_FINE_TO_COARSE, minlength=20)
    np.testing.assert_array_equal(counts, 5)


# -- blobs ---------------------------------------------------------------------


def test_blobs_counts_and_determinism():
    a = make_blobs(4, 50, (8, 8, 1), separation=6.0, seed=9)
    b = make_blobs(4, 50, (8, 8, 1), separation=6.0, seed=9)
    assert len(a) == 200
    assert a.images.shape == (200, 8, 8, 1)
    np.testing.assert_array_equal(a.images, b.images)
    c = make_blobs(4, 50, (8, 8, 1), separation=6.0, seed=10)
    assert not np.array_equal(a.images, c.images)
    assert np.abs(a.images).max() < 1.0


def test_blobs_nearest_centroid_oracle():
    train = make_blobs(2, 200, 2, separation=10.0, seed=1, centers_seed=99)
    test = make_blobs(2, 200, 2, separation=10.0, seed=2, centers_seed=99)
    centroids = np.stack([train.images[train.labels == c].mean(axis=0)
                          for c in range(2)])
    dists = np.linalg.norm(test.images[:, None, :] - centroids[None], axis=2)
    acc = (dists.argmin(axis=1) == test.labels).mean()
    assert acc >= 0.99


def test_blobs_require_positive_separation():
    with pytest.raises(ValueError):
        make_blobs(2, 10, 2, separation=0.0, seed=0)
