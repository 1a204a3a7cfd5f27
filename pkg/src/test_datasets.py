"""
Tests for datasets.py
=====================
IDX parsing (raw and gzip), format errors, and the synthetic generator.
"""

import gzip
import struct

import numpy as np
import pytest

from cl_errors import ConfigurationError, FormatError
from datasets import gen_synthetic, load_idx, load_mnist_dir
from mlp_model import loss_and_grad, model_init, forward, params_get, params_set


def write_images(path, images: np.ndarray, magic: int = 0x00000803):
    count, rows, cols = images.shape
    payload = struct.pack(">IIII", magic, count, rows, cols) + images.astype(np.uint8).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


def write_labels(path, labels: np.ndarray, magic: int = 0x00000801):
    payload = struct.pack(">II", magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(payload)
    return path


@pytest.fixture
def mnist_like():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(5, 28, 28)), np.array([0, 3, 9, 3, 1])


class TestLoadIdx:
    """Test load_idx"""

    def test_parses_header_and_scales_pixels(self, tmp_path, mnist_like):
        images, labels = mnist_like
        data = load_idx(write_images(tmp_path / "img", images), write_labels(tmp_path / "lbl", labels))
        assert len(data) == 5
        assert data.feature_dim == 784
        assert data.image_shape == (28, 28)
        assert data.labels.tolist() == [0, 3, 9, 3, 1]
        assert np.allclose(data.inputs[1], images[1].ravel() / 255.0)
        assert data.inputs.min() >= 0.0 and data.inputs.max() <= 1.0

    def test_gzip_files(self, tmp_path, mnist_like):
        images, labels = mnist_like
        data = load_idx(write_images(tmp_path / "img.gz", images),
                        write_labels(tmp_path / "lbl.gz", labels))
        assert data.inputs.shape == (5, 784)

    def test_count_mismatch(self, tmp_path, mnist_like):
        images, labels = mnist_like
        with pytest.raises(FormatError, match="count"):
            load_idx(write_images(tmp_path / "img", images), write_labels(tmp_path / "lbl", labels[:4]))

    def test_label_magic_on_images_file(self, tmp_path, mnist_like):
        images, labels = mnist_like
        with pytest.raises(FormatError, match="magic"):
            load_idx(write_images(tmp_path / "img", images, magic=0x00000801),
                     write_labels(tmp_path / "lbl", labels))

    def test_truncated_pixels(self, tmp_path, mnist_like):
        images, labels = mnist_like
        path = write_images(tmp_path / "img", images)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="pixel"):
            load_idx(path, write_labels(tmp_path / "lbl", labels))

    def test_truncated_header(self, tmp_path, mnist_like):
        _, labels = mnist_like
        path = tmp_path / "img"
        path.write_bytes(b"\x00\x00\x08\x03\x00")
        with pytest.raises(FormatError, match="header"):
            load_idx(path, write_labels(tmp_path / "lbl", labels))

    def test_label_beyond_class_count(self, tmp_path, mnist_like):
        images, _ = mnist_like
        with pytest.raises(FormatError):
            load_idx(write_images(tmp_path / "img", images),
                     write_labels(tmp_path / "lbl", np.array([0, 1, 2, 3, 12])))

    def test_mnist_directory(self, tmp_path, mnist_like):
        images, labels = mnist_like
        write_images(tmp_path / "train-images-idx3-ubyte.gz", images)
        write_labels(tmp_path / "train-labels-idx1-ubyte.gz", labels)
        write_images(tmp_path / "t10k-images-idx3-ubyte", images[:2])
        write_labels(tmp_path / "t10k-labels-idx1-ubyte", labels[:2])
        train, test = load_mnist_dir(tmp_path)
        assert (len(train), len(test)) == (5, 2)

    def test_missing_mnist_files(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist_dir(tmp_path)


class TestGenSynthetic:
    """Test gen_synthetic"""

    def test_balanced_construction(self):
        """10 classes x 100, dim 64, seed 3"""
        data = gen_synthetic(10, 100, 64, seed=3)
        assert data.inputs.shape == (1000, 64)
        assert np.bincount(data.labels).tolist() == [100] * 10
        assert data.image_shape == (8, 8)
        assert data.inputs.min() == 0.0 and data.inputs.max() == 1.0

    def test_deterministic_per_seed(self):
        a = gen_synthetic(4, 10, 16, seed=5)
        b = gen_synthetic(4, 10, 16, seed=5)
        assert np.array_equal(a.inputs, b.inputs)

    def test_seeds_change_class_means(self):
        a = gen_synthetic(4, 50, 16, seed=1)
        b = gen_synthetic(4, 50, 16, seed=2)
        mean_a = a.inputs[a.labels == 0].mean(axis=0)
        mean_b = b.inputs[b.labels == 0].mean(axis=0)
        assert not np.allclose(mean_a, mean_b)

    def test_non_square_dim_has_no_image_shape(self):
        assert gen_synthetic(2, 3, 10, seed=0).image_shape is None

    def test_invalid_counts(self):
        with pytest.raises(ConfigurationError):
            gen_synthetic(0, 10, 4, seed=0)

    def test_softmax_regression_separates_classes(self):
        """Softmax regression on the raw [0, 1] features reaches >= 95% train accuracy"""
        data = gen_synthetic(10, 100, 64, seed=3)
        classifier = model_init((64, 10), seed=0)
        for _ in range(1000):
            _, grad = loss_and_grad(classifier, data.inputs, data.labels)
            params_set(classifier, params_get(classifier) - 0.1 * grad)
        train_acc = np.mean(np.argmax(forward(classifier, data.inputs), axis=1) == data.labels)
        assert train_acc >= 0.95
