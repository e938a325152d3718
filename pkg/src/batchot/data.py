"""Datasets: MNIST IDX files, synthetic Gaussian blobs, batch-pair streams."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from batchot.errors import InputError

__all__ = [
    "BatchPair",
    "Dataset",
    "IdxCountMismatchError",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "batch_pair_stream",
    "load_mnist_idx",
    "synth_blobs",
    "train_test_split",
    "write_idx_images",
    "write_idx_labels",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(InputError):
    """Base for malformed IDX files."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise InputError(f"features must be a non-empty 2-D array, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise InputError("one label per feature row required")
        if not np.all(np.isfinite(features)):
            raise InputError("features have non-finite entries")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise InputError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.class_count)


@dataclass(frozen=True)
class BatchPair:
    x1: np.ndarray
    x2: np.ndarray
    labels1: np.ndarray
    labels2: np.ndarray

    @property
    def n(self) -> int:
        return self.x1.shape[0]


def _read(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(blob: bytes, path, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(blob) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX magic number")
    (found,) = struct.unpack(">I", blob[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(blob) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    size = int(np.prod(dims))
    if len(blob) < header + size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(blob) - header}")
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    """Read an IDX image/label file pair (optionally gzipped).

    Pixels are scaled to ``[0, 1]`` and each image is flattened.
    """
    images = _parse_idx(_read(images_path), images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(_read(labels_path), labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), class_count)


def write_idx_images(path, images) -> None:
    """Write a ``(count, rows, cols)`` uint8 array as an IDX3 file."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise InputError("images must be a (count, rows, cols) uint8 array")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.min() < 0 or labels.max() > 255:
        raise InputError("labels must be a 1-D array of values in [0, 255]")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.astype(np.uint8).tobytes())


def synth_blobs(class_count: int, per_class: int, d: int, sigma: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters around centres drawn from ``[0, 1]^d``."""
    if class_count < 2 or per_class < 1 or d < 1:
        raise InputError("need class_count >= 2, per_class >= 1, d >= 1")
    if not sigma > 0:
        raise InputError("sigma must be > 0")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.0, 1.0, size=(class_count, d))
    labels = np.repeat(np.arange(class_count), per_class)
    features = centres[labels] + sigma * rng.standard_normal((labels.size, d))
    return Dataset(features, labels, class_count)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split: each class contributes ``round(test_fraction * size)`` test rows."""
    if not 0 < test_fraction < 1:
        raise InputError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls in range(ds.class_count):
        members = np.flatnonzero(ds.labels == cls)
        k = int(round(test_fraction * members.size))
        test_idx.append(rng.permutation(members)[:k])
    test_mask = np.zeros(len(ds), dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    return ds.take(np.flatnonzero(~test_mask)), ds.take(np.flatnonzero(test_mask))


def batch_pair_stream(ds: Dataset, batch_size: int, epoch_seed: int) -> Iterator[BatchPair]:
    """One epoch of batch pairs drawn from two independent shuffles.

    A trailing remainder shorter than ``batch_size`` is dropped.
    """
    m = len(ds)
    if batch_size < 1 or batch_size > m:
        raise InputError(f"batch_size must be in [1, {m}], got {batch_size}")
    rng = np.random.default_rng(epoch_seed)
    perm1 = rng.permutation(m)
    perm2 = rng.permutation(m)
    for start in range(0, m - batch_size + 1, batch_size):
        i1 = perm1[start : start + batch_size]
        i2 = perm2[start : start + batch_size]
        yield BatchPair(ds.features[i1], ds.features[i2], ds.labels[i1], ds.labels[i2])
