"""Synthetic MNIST-format digit corpus for tests and demos.

Renders seven-segment style digits onto 28x28 grayscale canvases with
per-sample jitter (endpoint noise, stroke width, global shift, intensity,
mild pixel noise) and writes standard IDX files. Useful wherever the real
MNIST files are not on disk; the data loader does not care which it gets.
"""

from __future__ import annotations

import os

import numpy as np

from .mnist_data import Dataset, quantize_to_bytes, write_idx_images, write_idx_labels

# Segment endpoints on a 28x28 canvas, (x, y) with y growing downward.
_TL, _TR = (9.0, 6.0), (19.0, 6.0)
_ML, _MR = (9.0, 14.0), (19.0, 14.0)
_BL, _BR = (9.0, 22.0), (19.0, 22.0)

_SEGMENTS = {
    "a": (_TL, _TR),
    "b": (_TR, _MR),
    "c": (_MR, _BR),
    "d": (_BL, _BR),
    "e": (_ML, _BL),
    "f": (_TL, _ML),
    "g": (_ML, _MR),
}

_DIGIT_SEGMENTS = [
    "abcdef",  # 0
    "bc",      # 1
    "abged",   # 2
    "abgcd",   # 3
    "fgbc",    # 4
    "afgcd",   # 5
    "afgedc",  # 6
    "abc",     # 7
    "abcdefg", # 8
    "abcdfg",  # 9
]

_YY, _XX = np.mgrid[0:28, 0:28].astype(np.float64)


def _segment_field(p0, p1, radius: float) -> np.ndarray:
    """Anti-aliased stroke intensity from the distance to a line segment."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    norm2 = dx * dx + dy * dy
    t = ((_XX - x0) * dx + (_YY - y0) * dy) / norm2 if norm2 > 0 else 0.0
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(_XX - (x0 + t * dx), _YY - (y0 + t * dy))
    return np.clip((radius - dist) / 0.9 + 0.5, 0.0, 1.0)


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered (28, 28) float image of `digit` in [0, 1]."""
    shift = rng.uniform(-2.0, 2.0, size=2)
    radius = rng.uniform(1.0, 1.6)
    intensity = rng.uniform(0.75, 1.0)
    canvas = np.zeros((28, 28))
    for name in _DIGIT_SEGMENTS[digit]:
        (x0, y0), (x1, y1) = _SEGMENTS[name]
        jit = rng.normal(0.0, 0.5, size=4)
        p0 = (x0 + shift[0] + jit[0], y0 + shift[1] + jit[1])
        p1 = (x1 + shift[0] + jit[2], y1 + shift[1] + jit[3])
        canvas = np.maximum(canvas, _segment_field(p0, p1, radius))
    canvas *= intensity
    canvas += rng.normal(0.0, 0.015, size=canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def make_dataset(per_class: int, seed: int, split: str = "train",
                 classes=range(10)) -> Dataset:
    """Shuffled synthetic dataset with `per_class` images per class."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for cls in classes:
        for _ in range(per_class):
            images.append(render_digit(int(cls), rng))
            labels.append(int(cls))
    order = rng.permutation(len(images))
    stack = np.stack(images).astype(np.float32)[..., np.newaxis][order]
    # quantize so the corpus behaves exactly like byte-backed IDX data
    stack = (quantize_to_bytes(stack).astype(np.float32) / 255.0)
    return Dataset(images=stack, labels=np.array(labels, dtype=np.uint8)[order],
                   split=split, seed=seed)


def build_corpus(out_dir: str, train_per_class: int = 600, test_per_class: int = 250,
                 seed: int = 0) -> dict[str, str]:
    """Write train/test IDX files under out_dir; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "images_path": os.path.join(out_dir, "train-images-idx3-ubyte"),
        "labels_path": os.path.join(out_dir, "train-labels-idx1-ubyte"),
        "test_images_path": os.path.join(out_dir, "t10k-images-idx3-ubyte"),
        "test_labels_path": os.path.join(out_dir, "t10k-labels-idx1-ubyte"),
    }
    train = make_dataset(train_per_class, seed, "train")
    test = make_dataset(test_per_class, seed + 1, "test")
    write_idx_images(paths["images_path"], quantize_to_bytes(train.images[..., 0]))
    write_idx_labels(paths["labels_path"], train.labels)
    write_idx_images(paths["test_images_path"], quantize_to_bytes(test.images[..., 0]))
    write_idx_labels(paths["test_labels_path"], test.labels)
    return paths
