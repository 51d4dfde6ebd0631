"""Dataset ingestion: CIFAR-10/100 binary files and synthetic blob images.

CIFAR binary layout (bit-exact): CIFAR-10 records are 3073 bytes (1 label
byte, then 1024 R + 1024 G + 1024 B row-major pixel bytes); CIFAR-100
records are 3074 bytes (coarse label, fine label, pixels).  Pixels are
normalized to [-1, 1] via v / 127.5 - 1, which round-trips to the original
bytes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE

# Canonical CIFAR-100 label vocabulary (ids are alphabetical rank).
CIFAR100_FINE_NAMES = (
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle",
    "bicycle", "bottle", "bowl", "boy", "bridge", "bus", "butterfly", "camel",
    "can", "castle", "caterpillar", "cattle", "chair", "chimpanzee", "clock",
    "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster",
    "house", "kangaroo", "keyboard", "lamp", "lawn_mower", "leopard", "lion",
    "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain", "mouse",
    "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear",
    "pickup_truck", "pine_tree", "plain", "plate", "poppy", "porcupine",
    "possum", "rabbit", "raccoon", "ray", "road", "rocket", "rose", "sea",
    "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake", "spider",
    "squirrel", "streetcar", "sunflower", "sweet_pepper", "table", "tank",
    "telephone", "television", "tiger", "tractor", "train", "trout", "tulip",
    "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
)

CIFAR100_COARSE_NAMES = (
    "aquatic_mammals", "fish", "flowers", "food_containers",
    "fruit_and_vegetables", "household_electrical_devices",
    "household_furniture", "insects", "large_carnivores",
    "large_man-made_outdoor_things", "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores", "medium_mammals",
    "non-insect_invertebrates", "people", "reptiles", "small_mammals",
    "trees", "vehicles_1", "vehicles_2",
)

# fine id -> coarse id, canonical CIFAR-100 grouping (5 fine per coarse)
CIFAR100_FINE_TO_COARSE = np.array([
    4, 1, 14, 8, 0, 6, 7, 7, 18, 3,
    3, 14, 9, 18, 7, 11, 3, 9, 7, 11,
    6, 11, 5, 10, 7, 6, 13, 15, 3, 15,
    0, 11, 1, 10, 12, 14, 16, 9, 11, 5,
    5, 19, 8, 8, 15, 13, 14, 17, 18, 10,
    16, 4, 17, 4, 2, 0, 17, 4, 18, 17,
    10, 3, 2, 12, 12, 16, 12, 1, 9, 19,
    2, 10, 0, 1, 16, 12, 9, 13, 15, 13,
    16, 19, 2, 4, 6, 19, 5, 5, 8, 19,
    18, 1, 2, 15, 6, 0, 17, 8, 14, 13,
], dtype=np.int64)


def superclass_tasks() -> list[tuple[str, tuple[int, ...]]]:
    """The 20 superclasses in coarse-id order, each with its 5 fine ids."""
    out = []
    for coarse in range(20):
        fines = tuple(int(i) for i in np.flatnonzero(CIFAR100_FINE_TO_COARSE == coarse))
        out.append((CIFAR100_COARSE_NAMES[coarse], fines))
    return out


@dataclass
class LabeledImageSet:
    """Images in [-1, 1] with integer labels; layout (n, H, W, C)."""

    images: np.ndarray
    labels: np.ndarray
    split: str
    coarse_labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class DatasetBundle:
    train: LabeledImageSet
    test: LabeledImageSet
    num_classes: int


def normalize_pixels(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 127.5 - 1.0


def denormalize_pixels(images: np.ndarray) -> np.ndarray:
    return np.rint((images + 1.0) * 127.5).astype(np.uint8)


def _parse_records(blob: bytes, label_bytes: int, path: str) -> tuple[np.ndarray, np.ndarray]:
    record = label_bytes + CIFAR_PIXELS
    if len(blob) == 0 or len(blob) % record != 0:
        raise DataFormatError(
            f"{path}: size {len(blob)} is not a multiple of {record}-byte records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, record)
    labels = raw[:, :label_bytes].astype(np.int64)
    pixels = raw[:, label_bytes:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    images = normalize_pixels(pixels.transpose(0, 2, 3, 1))
    return labels, images


def parse_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    labels, images = _parse_records(Path(path).read_bytes(), 1, str(path))
    labels = labels[:, 0]
    if labels.max(initial=0) > 9:
        raise DataFormatError(f"{path}: label byte exceeds 9")
    return images, labels


def parse_cifar100_file(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    labels, images = _parse_records(Path(path).read_bytes(), 2, str(path))
    coarse, fine = labels[:, 0], labels[:, 1]
    if coarse.max(initial=0) > 19 or fine.max(initial=0) > 99:
        raise DataFormatError(f"{path}: label bytes out of range")
    return images, fine, coarse


def load_cifar10(directory) -> DatasetBundle:
    directory = Path(directory)
    train_imgs, train_labels = [], []
    for i in range(1, 6):
        images, labels = parse_cifar10_file(directory / f"data_batch_{i}.bin")
        train_imgs.append(images)
        train_labels.append(labels)
    test_images, test_labels = parse_cifar10_file(directory / "test_batch.bin")
    return DatasetBundle(
        train=LabeledImageSet(np.concatenate(train_imgs),
                              np.concatenate(train_labels), "train"),
        test=LabeledImageSet(test_images, test_labels, "test"),
        num_classes=10,
    )


def load_cifar100(directory) -> DatasetBundle:
    directory = Path(directory)
    tr_images, tr_fine, tr_coarse = parse_cifar100_file(directory / "train.bin")
    te_images, te_fine, te_coarse = parse_cifar100_file(directory / "test.bin")
    return DatasetBundle(
        train=LabeledImageSet(tr_images, tr_fine, "train", coarse_labels=tr_coarse),
        test=LabeledImageSet(te_images, te_fine, "test", coarse_labels=te_coarse),
        num_classes=100,
    )


def fine_to_coarse_map(dataset: LabeledImageSet) -> dict[int, int]:
    """Observed fine->coarse mapping; raises if any fine label is ambiguous."""
    if dataset.coarse_labels is None:
        raise DataFormatError("dataset has no coarse labels")
    mapping: dict[int, int] = {}
    for fine, coarse in zip(dataset.labels, dataset.coarse_labels):
        fine, coarse = int(fine), int(coarse)
        if mapping.setdefault(fine, coarse) != coarse:
            raise DataFormatError(f"fine label {fine} maps to several superclasses")
    return mapping


# -- synthetic blobs -------------------------------------------------------------


def make_blobs(num_classes: int, per_class: int, shape, separation: float,
               seed: int, centers_seed: int | None = None,
               split: str = "train") -> LabeledImageSet:
    """Isotropic Gaussian blobs, one distinct center per class.

    ``shape`` is either an int (plain feature vectors) or an image shape
    (H, W, C); image samples are squashed into (-1, 1) with tanh.  Centers
    are rescaled so their minimum pairwise distance equals ``separation``;
    pass the same ``centers_seed`` to lay train and test on shared centers.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    dim = shape if isinstance(shape, int) else int(np.prod(shape))
    c_rng = np.random.default_rng(centers_seed if centers_seed is not None else seed)
    centers = c_rng.standard_normal((num_classes, dim))
    if num_classes > 1:
        gaps = [np.linalg.norm(centers[i] - centers[j])
                for i in range(num_classes) for j in range(i + 1, num_classes)]
        centers *= separation / min(gaps)

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    samples = centers[labels] + rng.standard_normal((len(labels), dim))
    if isinstance(shape, int):
        images = samples
    else:
        images = np.tanh(samples / 3.0).reshape(len(labels), *shape)
    return LabeledImageSet(images=images, labels=labels, split=split)
