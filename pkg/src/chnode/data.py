"""Dataset construction, IDX ingestion, noise corruption, robustness probe."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import IdxFormatError
from .model import ModelSpec, forward_states

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Fixed 2D binary task: two separable clusters, the class-1 points sitting
# close to the natural boundary region so perturbation radii differ sharply
# between brittle and contractive models.
BLOBS_POINTS = np.array(
    [
        [-2.0, 0.0],
        [-1.6, 0.8],
        [-1.5, -0.7],
        [0.3, 0.2],
        [0.5, -0.4],
        [0.1, 0.6],
    ]
)
BLOBS_LABELS = np.array([0, 0, 0, 1, 1, 1])


@dataclass
class Dataset:
    features: np.ndarray  # (size, m)
    labels: np.ndarray    # (size,)
    num_classes: int
    name: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} and labels {self.labels.shape} do not align"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, count: int, name: str = "") -> "Dataset":
        return Dataset(
            features=self.features[:count].copy(),
            labels=self.labels[:count].copy(),
            num_classes=self.num_classes,
            name=name or self.name,
        )


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str           # "gaussian" or "salt_pepper"
    sigma: float        # variance (gaussian) or corrupted-pixel fraction (salt_pepper)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "salt_pepper"):
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.kind == "salt_pepper" and self.sigma > 1:
            raise ValueError(f"salt-and-pepper fraction must be at most 1, got {self.sigma}")


def _read_be_u32(f, path):
    raw = f.read(4)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header", path=str(path), offset=f.tell())
    return struct.unpack(">I", raw)[0]


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse the big-endian IDX pair; pixels are scaled to [0, 1] by /255."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"{images_path}: unexpected magic 0x{magic:08x}, want 0x{IMAGE_MAGIC:08x}",
                path=str(images_path),
                offset=0,
            )
        count = _read_be_u32(f, images_path)
        rows = _read_be_u32(f, images_path)
        cols = _read_be_u32(f, images_path)
        payload = f.read()
    expect = count * rows * cols
    if len(payload) != expect:
        raise IdxFormatError(
            f"{images_path}: payload holds {len(payload)} bytes, header promises {expect}",
            path=str(images_path),
            offset=16 + len(payload),
        )
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path)
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: unexpected magic 0x{magic:08x}, want 0x{LABEL_MAGIC:08x}",
                path=str(labels_path),
                offset=0,
            )
        label_count = _read_be_u32(f, labels_path)
        label_payload = f.read()
    if len(label_payload) != label_count:
        raise IdxFormatError(
            f"{labels_path}: payload holds {len(label_payload)} bytes, header promises {label_count}",
            path=str(labels_path),
            offset=8 + len(label_payload),
        )
    if label_count != count:
        raise IdxFormatError(
            f"image file holds {count} items but label file holds {label_count}",
            path=str(labels_path),
            offset=4,
        )
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(int)
    return Dataset(
        features=images.astype(float) / 255.0,
        labels=labels,
        num_classes=10,
        name="mnist",
    )


def write_idx_images(path, images: np.ndarray, side: int) -> None:
    """Write [0, 1] features back out as a uint8 IDX image file."""
    images = np.asarray(images)
    count = images.shape[0]
    raw = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, count, side, side))
        f.write(raw.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def make_blobs_2d() -> Dataset:
    """The fixed six-point binary task (three points per class)."""
    return Dataset(
        features=BLOBS_POINTS.copy(),
        labels=BLOBS_LABELS.copy(),
        num_classes=2,
        name="blobs2d",
    )


def make_double_circles(
    n_train: int, n_test: int, seed: int = 0, r_inner: float = 0.5, r_outer: float = 1.0,
    jitter: float = 0.05,
) -> tuple[Dataset, Dataset]:
    """Two concentric class-alternating rings with small radial jitter."""
    if n_train < 2 or n_test < 2:
        raise ValueError("need at least two points per split")
    rng = np.random.default_rng(seed)

    def ring_points(count, name):
        labels = np.arange(count) % 2
        radii = np.where(labels == 0, r_inner, r_outer) + rng.uniform(-jitter, jitter, count)
        angles = rng.uniform(0.0, 2.0 * np.pi, count)
        pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        return Dataset(features=pts, labels=labels, num_classes=2, name=name)

    return ring_points(n_train, "double_circles_train"), ring_points(n_test, "double_circles_test")


# Seven-segment layout used by the synthetic digit renderer: each segment is
# a (row0, row1, col0, col1) box on a 20x12 glyph canvas.
_SEGMENTS = {
    "a": (0, 3, 0, 12),
    "b": (0, 10, 9, 12),
    "c": (10, 20, 9, 12),
    "d": (17, 20, 0, 12),
    "e": (10, 20, 0, 3),
    "f": (0, 10, 0, 3),
    "g": (8, 11, 0, 12),
}
_DIGIT_SEGMENTS = {
    0: "abcdef",
    1: "bc",
    2: "abged",
    3: "abgcd",
    4: "fgbc",
    5: "afgcd",
    6: "afgedc",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}


def _digit_glyph(digit: int) -> np.ndarray:
    glyph = np.zeros((20, 12))
    for seg in _DIGIT_SEGMENTS[digit]:
        r0, r1, c0, c1 = _SEGMENTS[seg]
        glyph[r0:r1, c0:c1] = 1.0
    return glyph


def make_synthetic_digits(count: int, seed: int = 0, side: int = 28) -> Dataset:
    """Procedural ten-class digit images: jittered glyphs on a noisy canvas.

    A deterministic stand-in for handwritten-digit data in offline
    environments; images are ``side`` x ``side`` floats in [0, 1].
    """
    rng = np.random.default_rng(seed)
    glyphs = [_digit_glyph(d) for d in range(10)]
    gh, gw = glyphs[0].shape
    features = np.empty((count, side * side))
    labels = np.empty(count, dtype=int)
    for i in range(count):
        digit = int(rng.integers(0, 10))
        canvas = rng.uniform(0.0, 0.10, size=(side, side))
        row = int(rng.integers(0, side - gh + 1))
        col = int(rng.integers(0, side - gw + 1))
        intensity = rng.uniform(0.65, 1.0)
        patch = glyphs[digit] * intensity * rng.uniform(0.85, 1.0, size=(gh, gw))
        region = canvas[row : row + gh, col : col + gw]
        canvas[row : row + gh, col : col + gw] = np.maximum(region, patch)
        features[i] = np.clip(canvas, 0.0, 1.0).ravel()
        labels[i] = digit
    return Dataset(features=features, labels=labels, num_classes=10, name="synthetic_digits")


def corrupt(ds: Dataset, spec: CorruptionSpec) -> Dataset:
    """Noisy copy of a dataset; labels and size are never altered.

    Gaussian: add zero-mean noise of variance sigma, clamping to [0, 1]
    when the clean features are themselves [0, 1]-bounded (image data).
    Salt-and-pepper: per image, floor(sigma * m) distinct pixels are each
    forced to 0 or 1 with equal probability.
    """
    if spec.sigma == 0.0:
        return Dataset(
            features=ds.features.copy(), labels=ds.labels.copy(),
            num_classes=ds.num_classes, name=ds.name,
        )
    bounded = bool(ds.features.size == 0 or (ds.features.min() >= 0.0 and ds.features.max() <= 1.0))
    out = ds.features.copy()
    m = ds.num_features
    if spec.kind == "gaussian":
        std = np.sqrt(spec.sigma)
        for i in range(ds.size):
            rng = np.random.default_rng([spec.seed, i])
            out[i] += rng.normal(0.0, std, size=m)
        if bounded:
            np.clip(out, 0.0, 1.0, out=out)
    else:
        if not bounded:
            raise ValueError("salt-and-pepper noise needs [0, 1]-bounded features")
        k = int(np.floor(spec.sigma * m))
        for i in range(ds.size):
            rng = np.random.default_rng([spec.seed, i])
            idx = rng.choice(m, size=k, replace=False)
            out[i, idx] = rng.integers(0, 2, size=k).astype(float)
    return Dataset(features=out, labels=ds.labels.copy(), num_classes=ds.num_classes, name=ds.name)


def _predict(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    final = forward_states(spec, x)[-1]
    logits = final @ spec.output_weight.T + spec.output_bias
    return np.argmax(logits, axis=1)


def robustness_radius(
    spec: ModelSpec,
    ds: Dataset,
    n_directions: int = 64,
    r_max: float = 2.0,
    tol: float = 1e-3,
    seed: int = 0,
) -> float:
    """Largest sampled perturbation radius preserving perfect classification.

    Bisection over r: a radius passes when every sample, pushed along every
    one of ``n_directions`` seeded unit directions, keeps its label. Returns
    0 when the clean set is not perfectly classified. Sampled estimate, not
    a certification.
    """
    if np.any(_predict(spec, ds.features) != ds.labels):
        return 0.0
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, ds.num_features))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def passes(r: float) -> bool:
        for d in dirs:
            if np.any(_predict(spec, ds.features + r * d) != ds.labels):
                return False
        return True

    if passes(r_max):
        return r_max
    lo, hi = 0.0, r_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo
