"""MNIST-format data handling: IDX parsing, triplet sampling, class filters.

Images are float32 arrays of shape (H, W, C) with intensities in [0, 1]
(raw bytes scaled by exactly 1/255). Datasets keep images stacked as
(N, H, W, C) plus a parallel label vector.

IDX layout (big-endian):
  images: magic 0x00000803, u32 count, u32 rows, u32 cols, count*rows*cols bytes
  labels: magic 0x00000801, u32 count, count bytes
Single images can be exported as binary PGM (P5, maxval 255).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyError,
    DimensionError,
    IdxFormatError,
    IdxLengthError,
    ParameterError,
    SamplingError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Labeled image collection with a split marker and the seed that built it."""

    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) uint8
    split: str = "train"
    seed: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive share a class; negative comes from a different one."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_label: int
    negative_label: int


def _read_exact(f, n: int, what: str, path: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxLengthError(f"{path}: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_idx_images(path: str) -> np.ndarray:
    """Read an IDX images file into a (N, rows, cols) uint8 array."""
    with open(path, "rb") as f:
        header = _read_exact(f, 16, "image header", path)
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
            )
        payload = _read_exact(f, count * rows * cols, "image payload", path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    """Read an IDX labels file into a (N,) uint8 array."""
    with open(path, "rb") as f:
        header = _read_exact(f, 8, "label header", path)
        magic, count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
            )
        payload = _read_exact(f, count, "label payload", path)
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Write (N, rows, cols) uint8 images as an IDX file (atomic replace)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    os.replace(tmp, path)


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())
    os.replace(tmp, path)


def load_idx(images_path: str, labels_path: str, split: str = "train") -> Dataset:
    """Load paired IDX files into a Dataset with intensities scaled by 1/255."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} has {raw.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    images = (raw.astype(np.float32) / 255.0)[..., np.newaxis]
    return Dataset(images=images, labels=labels.copy(), split=split, seed=0)


def quantize_to_bytes(images: np.ndarray) -> np.ndarray:
    """Map [0,1] intensities to uint8 by round-half-away-from-zero."""
    scaled = np.asarray(images, dtype=np.float64) * 255.0
    return np.floor(scaled + 0.5).clip(0, 255).astype(np.uint8)


def save_idx(dataset: Dataset, images_path: str, labels_path: str) -> None:
    """Write a Dataset back to IDX; round-trips bit-exactly with load_idx."""
    write_idx_images(images_path, quantize_to_bytes(dataset.images[..., 0]))
    write_idx_labels(labels_path, dataset.labels)


def write_pgm(path: str, image: np.ndarray) -> None:
    """Export one [0,1] image as binary PGM (P5, maxval 255)."""
    img = np.asarray(image)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise DimensionError(f"PGM export needs 1 channel, got {img.shape[2]}")
        img = img[..., 0]
    data = quantize_to_bytes(img)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        f.write(data.tobytes())
    os.replace(tmp, path)


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM into a (H, W, 1) float32 image in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P5"):
        raise IdxFormatError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval separated by whitespace/comments
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IdxLengthError(f"{path}: truncated PGM header")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = (int(v) for v in fields)
    if maxval != 255:
        raise IdxFormatError(f"{path}: unsupported PGM maxval {maxval}")
    payload = blob[pos : pos + width * height]
    if len(payload) != width * height:
        raise IdxLengthError(f"{path}: PGM payload too short")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (img.astype(np.float32) / 255.0)[..., np.newaxis]


def sample_triplet_indices(dataset: Dataset, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n (anchor, positive, negative) index triples.

    Anchor class uniform over classes holding >= 2 images, anchor/positive
    distinct within it, negative uniform over the remaining images. Raises
    SamplingError when no class qualifies or no negative exists.
    """
    labels = dataset.labels
    classes, counts = np.unique(labels, return_counts=True)
    anchor_classes = classes[counts >= 2]
    if anchor_classes.size == 0 or classes.size < 2:
        raise SamplingError(
            "triplet sampling needs a class with >= 2 images and a second class"
        )
    choice = rng.integers(anchor_classes.size, size=n)
    out = np.empty((n, 3), dtype=np.int64)
    for k, cls in enumerate(anchor_classes):
        rows = np.nonzero(choice == k)[0]
        if rows.size == 0:
            continue
        idxs = np.nonzero(labels == cls)[0]
        a = rng.integers(idxs.size, size=rows.size)
        p = rng.integers(idxs.size - 1, size=rows.size)
        p += p >= a  # distinct positive: shift past the anchor slot
        neg_pool = np.nonzero(labels != cls)[0]
        g = neg_pool[rng.integers(neg_pool.size, size=rows.size)]
        out[rows, 0] = idxs[a]
        out[rows, 1] = idxs[p]
        out[rows, 2] = g
    return out


def sample_triplets(dataset: Dataset, n: int, seed: int) -> list[Triplet]:
    """Sample n triplets; identical (dataset, n, seed) reproduces the sequence."""
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    idx = sample_triplet_indices(dataset, n, rng)
    return [
        Triplet(
            anchor=dataset.images[a],
            positive=dataset.images[p],
            negative=dataset.images[g],
            anchor_label=int(dataset.labels[a]),
            negative_label=int(dataset.labels[g]),
        )
        for a, p, g in idx
    ]


def filter_by_classes(dataset: Dataset, classes) -> Dataset:
    """Keep exactly the images whose label is in `classes`, order preserved."""
    wanted = set(int(c) for c in classes)
    mask = np.isin(dataset.labels, sorted(wanted))
    return Dataset(
        images=dataset.images[mask],
        labels=dataset.labels[mask],
        split=dataset.split,
        seed=dataset.seed,
    )


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded subsample keeping ceil(fraction * N) images in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    keep = int(np.ceil(fraction * n))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=keep, replace=False))
    return Dataset(
        images=dataset.images[chosen],
        labels=dataset.labels[chosen],
        split=dataset.split,
        seed=seed,
    )
