"""Synthetic classification data, IDX file reading/writing, key sets.

IDX layout (big-endian): two zero bytes, a type byte (0x08 = uint8), a
dimension-count byte, one uint32 per dimension, then the raw data. Image
files use magic 0x00000803 (3 dims), label files 0x00000801 (1 dim).
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class SyntheticTask:
    """``X`` has shape (samples, tokens, dim); ``labels`` has shape (samples,)."""

    X: np.ndarray
    labels: np.ndarray
    classes: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    def split(self, holdout: float = 0.2, seed: int = 0) -> tuple["SyntheticTask", "SyntheticTask"]:
        """Stratified train/holdout split."""
        rng = np.random.default_rng(seed)
        hold = []
        for c in range(self.classes):
            idx = np.flatnonzero(self.labels == c)
            idx = rng.permutation(idx)
            hold.extend(idx[: int(round(holdout * len(idx)))])
        mask = np.zeros(len(self), dtype=bool)
        mask[hold] = True
        return self._subset(~mask), self._subset(mask)

    def _subset(self, mask):
        return SyntheticTask(self.X[mask], self.labels[mask], self.classes, dict(self.meta))


def make_synthetic_task(
    samples: int = 2000,
    classes: int = 3,
    tokens: int = 64,
    dim: int = 8,
    separation: float = 3.0,
    noise: float = 1.0,
    informative: float = 0.25,
    seed: int = 0,
) -> SyntheticTask:
    """Token sets whose class shows up in a random subset of tokens.

    Each class owns a centre of norm ``separation``. A sample is ``tokens``
    draws of N(0, noise^2); a random ``informative`` fraction of them is
    shifted by the class centre. Labels cycle through the classes before
    shuffling, so class counts differ by at most one.
    """
    if classes < 2 or samples < classes:
        raise ValueError("need at least two classes and one sample per class")
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((classes, dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(samples) % classes)
    X = noise * rng.standard_normal((samples, tokens, dim))
    k = max(1, int(round(informative * tokens)))
    for s in range(samples):
        picked = rng.choice(tokens, size=k, replace=False)
        X[s, picked] += centres[labels[s]]
    meta = dict(classes=classes, separation=separation, noise=noise, informative=informative, seed=seed)
    return SyntheticTask(X=X, labels=labels, classes=classes, meta=meta)


def three_cluster_keys(
    per_cluster: int = 40, dim: int = 4, radius: float = 6.0, spread: float = 0.3, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Keys around three orthogonal centres of equal norm; returns (keys, centres)."""
    if dim < 3:
        raise DimensionError("three orthogonal clusters need dim >= 3")
    rng = np.random.default_rng(seed)
    centres = np.eye(dim)[:3] * radius
    keys = np.concatenate([c + spread * rng.standard_normal((per_cluster, dim)) for c in centres])
    return keys, centres


# -- IDX ----------------------------------------------------------------------


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad magic {raw[:4].hex()}", offset=0)
    if raw[2] != 0x08:
        raise DataError(f"{path}: unsupported element type 0x{raw[2]:02x} (only uint8)", offset=2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated dimension list", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + math.prod(dims)
    if len(raw) < expected:
        raise DataError(f"{path}: truncated data, expected {expected} bytes, got {len(raw)}", offset=len(raw))
    if len(raw) > expected:
        raise DataError(f"{path}: {len(raw) - expected} trailing bytes", offset=expected)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"only uint8 IDX files are supported, got {array.dtype}")
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(array).tobytes())


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(N, H, W) images -> (N, H*W/patch^2, patch^2) tokens, patches in row-major order."""
    N, H, W = images.shape
    if patch < 1 or H % patch or W % patch:
        raise DimensionError(f"patch size {patch} does not tile {H}x{W} images")
    t = images.reshape(N, H // patch, patch, W // patch, patch).transpose(0, 1, 3, 2, 4)
    return t.reshape(N, (H // patch) * (W // patch), patch * patch)


def load_idx_dataset(images_path, labels_path=None, patch: int = 7) -> SyntheticTask:
    """Load IDX images (and optional labels) as token sets scaled to [0, 1]."""
    images = read_idx(images_path)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected a 3-D image tensor, got {images.ndim} dims", offset=3)
    if labels_path is None:
        labels = np.zeros(images.shape[0], dtype=np.int64)
    else:
        labels = read_idx(labels_path).astype(np.int64)
        if labels.ndim != 1:
            raise DataError(f"{labels_path}: expected a 1-D label vector", offset=3)
        if len(labels) != images.shape[0]:
            raise DataError(f"{labels_path}: {len(labels)} labels for {images.shape[0]} images", offset=4)
    X = patchify(images.astype(np.float64) / 255.0, patch)
    classes = int(labels.max()) + 1 if len(labels) else 1
    return SyntheticTask(X=X, labels=labels, classes=max(classes, 1), meta=dict(source=str(images_path), patch=patch))
