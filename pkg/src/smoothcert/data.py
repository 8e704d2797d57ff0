"""Datasets: synthetic 2-D generators and an IDX-format MNIST loader.

Every Dataset records provenance sufficient to regenerate it bit-exactly:
generator name and parameters for synthetic data, file SHA-256 digests plus
subsample parameters for files. Images are scaled to [0, 1]; no other
preprocessing is applied.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "IdxFormatError",
    "MagicMismatch",
    "TruncatedPayload",
    "CountMismatch",
    "gen_two_moons",
    "gen_gaussian_blobs",
    "load_mnist_idx",
    "stratified_subsample_indices",
    "from_provenance",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base for structured IDX parsing errors."""


class MagicMismatch(IdxFormatError):
    def __init__(self, path, expected, actual):
        super().__init__(f"{path}: expected magic 0x{expected:08x}, got 0x{actual:08x}")
        self.expected = expected
        self.actual = actual


class TruncatedPayload(IdxFormatError):
    def __init__(self, path, expected, actual):
        super().__init__(f"{path}: payload holds {actual} bytes, header promises {expected}")
        self.expected = expected
        self.actual = actual


class CountMismatch(IdxFormatError):
    def __init__(self, n_images, n_labels):
        super().__init__(f"image file holds {n_images} items, label file {n_labels}")
        self.n_images = n_images
        self.n_labels = n_labels


@dataclass
class Dataset:
    """Immutable-by-convention container: inputs (n, d), integer labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ValueError("inputs must be (n, d) aligned with (n,) labels")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def gen_two_moons(n: int, noise_std: float, seed: int, split: str = "train") -> Dataset:
    """Two interleaved half-circles with Gaussian jitter, balanced classes.

    Class 0 sits on the upper arc (cos t, sin t) and class 1 on the lower arc
    (1 - cos t, 1/2 - sin t), t evenly spaced over [0, pi]; the classes differ
    in size by at most one point.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    n_out = (n + 1) // 2
    n_in = n // 2
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    X = np.concatenate([outer, inner])
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    X = X + noise_std * rng.standard_normal(X.shape)
    prov = {"kind": "two_moons", "n": int(n), "noise_std": float(noise_std),
            "seed": int(seed), "split": split}
    return Dataset(inputs=X, labels=y, class_count=2, split=split, provenance=prov)


def gen_gaussian_blobs(n: int, centers, spread: float, seed: int,
                       split: str = "train") -> Dataset:
    """Isotropic Gaussian blobs around the given centers, labels by center index.

    Points are assigned to centers round-robin, so class sizes differ by at
    most one.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ValueError("need at least 2 centers of equal dimension")
    if n < 1 or spread < 0:
        raise ValueError("need n >= 1 and spread >= 0")
    labels = np.arange(n, dtype=np.int64) % centers.shape[0]
    rng = np.random.default_rng(seed)
    X = centers[labels] + spread * rng.standard_normal((n, centers.shape[1]))
    prov = {"kind": "blobs", "n": int(n), "centers": centers.tolist(),
            "spread": float(spread), "seed": int(seed), "split": split}
    return Dataset(inputs=X, labels=labels, class_count=centers.shape[0],
                   split=split, provenance=prov)


def stratified_subsample_indices(labels: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Deterministic class-stratified subsample; per-class counts within 1 of

    exact proportionality. Returns sorted indices into labels.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if not (1 <= size <= n):
        raise ValueError(f"subsample size must lie in [1, {n}], got {size}")
    classes, counts = np.unique(labels, return_counts=True)
    # Largest-remainder apportionment of `size` across classes.
    exact = counts * (size / n)
    take = np.floor(exact).astype(np.int64)
    remainder = exact - take
    shortfall = size - int(take.sum())
    if shortfall > 0:
        order = np.argsort(-remainder, kind="stable")
        take[order[:shortfall]] += 1
    rng = np.random.default_rng(seed)
    picked = []
    for cls, k in zip(classes, take):
        pool = np.flatnonzero(labels == cls)
        if k > len(pool):
            raise ValueError(f"class {cls} has only {len(pool)} items, need {k}")
        picked.append(rng.choice(pool, size=k, replace=False))
    return np.sort(np.concatenate(picked))


def _read_idx(path, expected_magic: int):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedPayload(path, 4, len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise MagicMismatch(path, expected_magic, magic)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedPayload(path, header, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = int(np.prod(dims))
    if len(raw) - header < total:
        raise TruncatedPayload(path, header + total, len(raw))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header, count=total)
    return dims, payload


def load_mnist_idx(images_path, labels_path, subsample: int = None, seed: int = 0,
                   split: str = "train") -> Dataset:
    """Load an IDX image/label file pair (big-endian magic, dims, ubyte payload).

    Pixels are scaled to [0, 1] by division by 255 and flattened row-major;
    no further preprocessing. With `subsample`, a deterministic class-
    stratified subset of that size is selected per seed.
    """
    img_dims, img_raw = _read_idx(images_path, IDX_IMAGES_MAGIC)
    lab_dims, lab_raw = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if img_dims[0] != lab_dims[0]:
        raise CountMismatch(img_dims[0], lab_dims[0])
    n = int(img_dims[0])
    d = int(np.prod(img_dims[1:]))
    X = img_raw.reshape(n, d).astype(np.float64) / 255.0
    y = lab_raw.astype(np.int64)
    prov = {
        "kind": "mnist",
        "images_path": str(images_path),
        "labels_path": str(labels_path),
        "images_sha256": hashlib.sha256(open(images_path, "rb").read()).hexdigest(),
        "labels_sha256": hashlib.sha256(open(labels_path, "rb").read()).hexdigest(),
        "subsample": None if subsample is None else int(subsample),
        "seed": int(seed),
        "split": split,
    }
    if subsample is not None:
        idx = stratified_subsample_indices(y, subsample, seed)
        X, y = X[idx], y[idx]
    return Dataset(inputs=X, labels=y, class_count=10, split=split, provenance=prov)


def from_provenance(prov: dict) -> Dataset:
    """Regenerate a dataset from its provenance record."""
    kind = prov.get("kind")
    if kind == "two_moons":
        return gen_two_moons(prov["n"], prov["noise_std"], prov["seed"], prov["split"])
    if kind == "blobs":
        return gen_gaussian_blobs(prov["n"], prov["centers"], prov["spread"],
                                  prov["seed"], prov["split"])
    if kind == "mnist":
        return load_mnist_idx(prov["images_path"], prov["labels_path"],
                              prov["subsample"], prov["seed"], prov["split"])
    raise ValueError(f"unknown provenance kind {kind!r}")
