"""
Dataset Loaders v1.0
====================
Sources for continual-learning streams.

- load_idx(): MNIST-style IDX image/label files (raw or gzip)
- load_mnist_dir(): train/t10k pair from a directory
- gen_synthetic(): seeded Gaussian-cluster classification data

All loaders return cl_scenarios.Dataset with inputs scaled to [0, 1].
"""

from pathlib import Path
from typing import Optional, Sequence
import gzip
import logging
import math
import struct

import numpy as np

from cl_errors import ConfigurationError, FormatError
from cl_scenarios import Dataset

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10

SYNTHETIC_RADIUS = 2.5
SYNTHETIC_SIGMA = 0.6


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _read_idx_header(data: bytes, path: Path, expected_magic: int, dims: int) -> tuple:
    header = struct.Struct(">" + "I" * (1 + dims))
    if len(data) < header.size:
        raise FormatError(f"{path}: header truncated ({len(data)} bytes)")
    magic, *sizes = header.unpack_from(data)
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    return sizes, data[header.size:]


def load_idx(images_path, labels_path, class_count: int = MNIST_CLASSES) -> Dataset:
    """
    Load an IDX image file and its label file.

    Args:
        images_path: ubyte image file (magic 0x803), optionally .gz
        labels_path: ubyte label file (magic 0x801), optionally .gz
        class_count: label range

    Returns:
        Dataset with pixels / 255 and image_shape set

    Raises:
        FormatError: naming the field that is wrong
    """
    images_path, labels_path = Path(images_path), Path(labels_path)

    (count, rows, cols), pixels = _read_idx_header(
        _read_bytes(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    if len(pixels) != count * rows * cols:
        raise FormatError(
            f"{images_path}: pixel payload {len(pixels)} bytes, header promises "
            f"{count} x {rows} x {cols}"
        )
    (label_count,), label_bytes = _read_idx_header(
        _read_bytes(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if len(label_bytes) != label_count:
        raise FormatError(
            f"{labels_path}: label payload {len(label_bytes)} bytes, header promises {label_count}"
        )
    if label_count != count:
        raise FormatError(f"image count {count} != label count {label_count}")

    inputs = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= class_count:
        raise FormatError(f"{labels_path}: label {labels.max()} outside [0, {class_count})")

    logger.info(f"Loaded {count} images ({rows}x{cols}) from {images_path.name}")
    return Dataset(inputs, labels, class_count, image_shape=(rows, cols))


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist_dir(directory) -> tuple:
    """(train, test) Datasets from the four standard MNIST files."""
    directory = Path(directory)
    train = load_idx(_find(directory, "train-images-idx3-ubyte"),
                     _find(directory, "train-labels-idx1-ubyte"))
    test = load_idx(_find(directory, "t10k-images-idx3-ubyte"),
                    _find(directory, "t10k-labels-idx1-ubyte"))
    return train, test


def _default_image_shape(feature_dim: int) -> Optional[tuple]:
    side = math.isqrt(feature_dim)
    return (side, side) if side * side == feature_dim else None


def gen_synthetic(class_count: int, per_class: int, feature_dim: int, seed: int,
                  image_shape: Optional[Sequence[int]] = None) -> Dataset:
    """
    Seeded Gaussian clusters, one per class.

    Class means lie on a sphere of radius SYNTHETIC_RADIUS; samples add
    isotropic noise with SYNTHETIC_SIGMA. Features are then affinely mapped
    to [0, 1] using the global min and max. Rows are grouped by class in
    ascending order.
    """
    if class_count < 1 or per_class < 1 or feature_dim < 1:
        raise ConfigurationError("class_count, per_class and feature_dim must be >= 1")

    rng = np.random.default_rng(seed)
    means = rng.normal(size=(class_count, feature_dim))
    means *= SYNTHETIC_RADIUS / np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)

    labels = np.repeat(np.arange(class_count), per_class)
    inputs = means[labels] + SYNTHETIC_SIGMA * rng.normal(size=(labels.size, feature_dim))

    lo, hi = inputs.min(), inputs.max()
    inputs = (inputs - lo) / (hi - lo) if hi > lo else np.zeros_like(inputs)

    if image_shape is None:
        image_shape = _default_image_shape(feature_dim)
    return Dataset(inputs, labels, class_count, image_shape=image_shape)
