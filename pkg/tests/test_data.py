import struct

import numpy as np
import pytest

from chnode import (
    CorruptionSpec,
    corrupt,
    load_mnist_idx,
    make_blobs_2d,
    make_double_circles,
    make_synthetic_digits,
    robustness_radius,
)
from chnode.data import Dataset, write_idx_images, write_idx_labels
from chnode.errors import IdxFormatError

from conftest import zero_weight_spec


def write_idx_fixture(tmp_path, images, labels, image_magic=0x803, label_magic=0x801,
                      truncate_images=0):
    """Raw IDX pair from uint8 arrays, with optional corruption knobs."""
    count, rows, cols = images.shape
    img_path = tmp_path / "images-idx3-ubyte"
    lab_path = tmp_path / "labels-idx1-ubyte"
    payload = images.tobytes()
    if truncate_images:
        payload = payload[:-truncate_images]
    img_path.write_bytes(struct.pack(">IIII", image_magic, count, rows, cols) + payload)
    lab_path.write_bytes(struct.pack(">II", label_magic, len(labels)) + bytes(labels))
    return img_path, lab_path


class TestIdx:
    def test_parse_fixture(self, tmp_path):
        images = np.arange(18, dtype=np.uint8).reshape(2, 3, 3) * 14
        img, lab = write_idx_fixture(tmp_path, images, [7, 2])
        ds = load_mnist_idx(img, lab)
        assert ds.size == 2
        assert ds.num_features == 9
        assert np.array_equal(ds.labels, [7, 2])
        assert np.allclose(ds.features, images.reshape(2, 9) / 255.0)

    def test_scaling_endpoints(self, tmp_path):
        images = np.array([[[0, 255]]], dtype=np.uint8)
        img, lab = write_idx_fixture(tmp_path, images, [1])
        ds = load_mnist_idx(img, lab)
        assert ds.features[0, 0] == 0.0
        assert ds.features[0, 1] == 1.0

    def test_wrong_magic(self, tmp_path):
        images = np.zeros((1, 2, 2), dtype=np.uint8)
        img, lab = write_idx_fixture(tmp_path, images, [0], image_magic=0x804)
        with pytest.raises(IdxFormatError, match="magic"):
            load_mnist_idx(img, lab)

    def test_truncated_payload(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_fixture(tmp_path, images, [0, 1], truncate_images=3)
        with pytest.raises(IdxFormatError, match="payload"):
            load_mnist_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_fixture(tmp_path, images, [0, 1, 1])
        with pytest.raises(IdxFormatError, match="holds"):
            load_mnist_idx(img, lab)

    def test_round_trip_exact(self, tmp_path, rng):
        raw = rng.integers(0, 256, size=(5, 4, 4)).astype(np.uint8)
        labels = rng.integers(0, 10, 5).astype(np.uint8)
        img = tmp_path / "img"
        lab = tmp_path / "lab"
        write_idx_images(img, raw.reshape(5, 16) / 255.0, side=4)
        write_idx_labels(lab, labels)
        ds = load_mnist_idx(img, lab)
        assert np.array_equal(np.rint(ds.features * 255).astype(np.uint8), raw.reshape(5, 16))
        assert np.array_equal(ds.labels, labels)


class TestBlobs:
    def test_shape(self):
        ds = make_blobs_2d()
        assert ds.size == 6
        assert ds.num_classes == 2
        assert np.sum(ds.labels == 0) == 3

    def test_idempotent(self):
        a, b = make_blobs_2d(), make_blobs_2d()
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_linearly_separable_by_sweep_oracle(self):
        # Exhaustive direction sweep: some projection direction separates
        # the classes, so a separating line exists.
        ds = make_blobs_2d()
        separable = False
        for theta in np.arange(0.0, np.pi, 1e-3):
            d = np.array([np.cos(theta), np.sin(theta)])
            p0 = ds.features[ds.labels == 0] @ d
            p1 = ds.features[ds.labels == 1] @ d
            if p0.max() < p1.min() or p1.max() < p0.min():
                separable = True
                break
        assert separable


class TestDoubleCircles:
    def test_ring_radii_ordered(self):
        train, test = make_double_circles(200, 100, seed=5)
        for ds in (train, test):
            r = np.linalg.norm(ds.features, axis=1)
            assert r[ds.labels == 0].max() < r[ds.labels == 1].min()

    def test_deterministic(self):
        a, _ = make_double_circles(50, 10, seed=9)
        b, _ = make_double_circles(50, 10, seed=9)
        assert np.array_equal(a.features, b.features)

    def test_class_balance(self):
        train, test = make_double_circles(101, 50, seed=1)
        assert abs(np.sum(train.labels == 0) - np.sum(train.labels == 1)) <= 1
        assert abs(np.sum(test.labels == 0) - np.sum(test.labels == 1)) <= 1


class TestSyntheticDigits:
    def test_deterministic_and_bounded(self):
        a = make_synthetic_digits(30, seed=4)
        b = make_synthetic_digits(30, seed=4)
        assert np.array_equal(a.features, b.features)
        assert a.features.min() >= 0.0
        assert a.features.max() <= 1.0
        assert a.num_classes == 10

    def test_all_classes_present(self):
        ds = make_synthetic_digits(200, seed=0)
        assert set(ds.labels.tolist()) == set(range(10))


class TestCorrupt:
    def image_ds(self, rng, size=20, m=16):
        return Dataset(
            features=rng.uniform(0, 1, size=(size, m)), labels=rng.integers(0, 3, size),
            num_classes=3, name="img",
        )

    def test_zero_sigma_identity(self, rng):
        ds = self.image_ds(rng)
        for kind in ("gaussian", "salt_pepper"):
            out = corrupt(ds, CorruptionSpec(kind=kind, sigma=0.0, seed=1))
            assert np.array_equal(out.features, ds.features)
            assert np.array_equal(out.labels, ds.labels)

    def test_salt_pepper_full(self, rng):
        ds = self.image_ds(rng)
        out = corrupt(ds, CorruptionSpec(kind="salt_pepper", sigma=1.0, seed=1))
        assert np.all(np.isin(out.features, (0.0, 1.0)))

    def test_salt_pepper_exact_fraction(self):
        # 0.5-valued pixels make every forced pixel detectable.
        ds = Dataset(features=np.full((10, 40), 0.5), labels=np.zeros(10, dtype=int),
                     num_classes=1, name="half")
        out = corrupt(ds, CorruptionSpec(kind="salt_pepper", sigma=0.25, seed=3))
        changed = np.sum(out.features != 0.5, axis=1)
        assert np.all(changed == 10)  # floor(0.25 * 40)

    def test_salt_pepper_rejects_unbounded(self, rng):
        ds = Dataset(features=rng.normal(size=(5, 4)) * 3, labels=np.zeros(5, dtype=int),
                     num_classes=1, name="wide")
        with pytest.raises(ValueError):
            corrupt(ds, CorruptionSpec(kind="salt_pepper", sigma=0.5, seed=0))

    def test_gaussian_variance_monte_carlo(self):
        # Features sit at 2.0 (outside [0, 1]) so no clamping interferes.
        k = 100_000
        ds = Dataset(features=np.full((k, 1), 2.0), labels=np.zeros(k, dtype=int),
                     num_classes=1, name="flat")
        out = corrupt(ds, CorruptionSpec(kind="gaussian", sigma=0.05, seed=11))
        noise = out.features - 2.0
        est = noise.var()
        se = 0.05 * np.sqrt(2.0 / (k - 1))
        assert abs(est - 0.05) <= 3 * se

    def test_gaussian_clamps_images(self, rng):
        ds = self.image_ds(rng)
        out = corrupt(ds, CorruptionSpec(kind="gaussian", sigma=0.2, seed=2))
        assert out.features.min() >= 0.0
        assert out.features.max() <= 1.0

    def test_deterministic_per_seed(self, rng):
        ds = self.image_ds(rng)
        spec = CorruptionSpec(kind="gaussian", sigma=0.1, seed=42)
        assert np.array_equal(corrupt(ds, spec).features, corrupt(ds, spec).features)

    def test_labels_and_size_preserved(self, rng):
        ds = self.image_ds(rng)
        for kind, sigma in (("gaussian", 0.3), ("salt_pepper", 0.4)):
            out = corrupt(ds, CorruptionSpec(kind=kind, sigma=sigma, seed=5))
            assert out.size == ds.size
            assert np.array_equal(out.labels, ds.labels)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            CorruptionSpec(kind="speckle", sigma=0.1, seed=0)


class TestRobustnessRadius:
    def linear_model(self, w, c):
        # Identity flow; the read-out implements the two-class linear rule
        # w.x + c vs 0.
        spec = zero_weight_spec(arch="resnet", classes=2)
        spec.output_weight[:] = np.array([[0.0, 0.0], w])
        spec.output_bias[:] = np.array([0.0, c])
        return spec

    def test_linear_model_distance_oracle(self):
        # Sample at distance d from the hyperplane w.x + c = 0.
        w = np.array([1.0, 1.0])
        c = -1.0
        x = np.array([1.5, 1.5])
        d = abs(w @ x + c) / np.linalg.norm(w)  # 2/sqrt(2)
        spec = self.linear_model(w, c)
        ds = Dataset(features=x[None, :], labels=np.array([1]), num_classes=2, name="pt")
        r = robustness_radius(spec, ds, n_directions=4096, r_max=4.0, tol=1e-3, seed=0)
        assert r <= d + 1e-3
        assert r >= 0.93 * d  # sampled estimate approaches d from below

    def test_misclassified_returns_zero(self):
        spec = self.linear_model(np.array([1.0, 0.0]), 0.0)
        ds = Dataset(features=np.array([[1.0, 0.0]]), labels=np.array([0]),
                     num_classes=2, name="pt")
        assert robustness_radius(spec, ds) == 0.0

    def test_monotone_under_same_directions(self):
        spec = self.linear_model(np.array([1.0, 0.5]), -0.2)
        ds = Dataset(features=np.array([[1.0, 1.0], [-1.0, -1.0]]),
                     labels=np.array([1, 0]), num_classes=2, name="pair")
        r = robustness_radius(spec, ds, n_directions=64, r_max=3.0, tol=1e-3, seed=7)
        assert r > 0
        rng = np.random.default_rng(7)
        dirs = rng.normal(size=(64, 2))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        from chnode.data import _predict

        for frac in (0.25, 0.5, 0.75, 1.0):
            rr = frac * r
            for d in dirs:
                assert np.all(_predict(spec, ds.features + rr * d) == ds.labels)
