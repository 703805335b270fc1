"""Dataset ingestion (IDX, CIFAR-10 binary), synthetic tasks, split utilities.

Loaders parse the published binary formats exactly and never download;
paths point at a local cache directory. The synthetic generators cover
desk-scale training when no real dataset is on disk: a seven-segment
digit task (10 classes, 28x28) and a two-moons style 2-D task.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "IdxFormatError",
    "load_idx",
    "save_idx",
    "load_mnist",
    "load_cifar10",
    "write_cifar_batch",
    "synth_two_moons_like",
    "synth_blobs",
    "synth_digits",
    "standardize",
    "shuffle_indices",
]

IDX_MAGIC_LABELS = 0x00000801
IDX_MAGIC_IMAGES = 0x00000803

CIFAR_RECORD_BYTES = 3073
CIFAR_BATCH_RECORDS = 10000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


class IdxFormatError(ValueError):
    """Raised when an IDX file has a bad magic number or is truncated."""


@dataclass
class Dataset:
    """Images (N,C,H,W) float64 with integer labels and normalization stats."""

    images: np.ndarray
    labels: np.ndarray
    classes: int
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"images/labels length mismatch: "
                             f"{self.images.shape[0]} vs {self.labels.shape[0]}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels outside [0, {self.classes})")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes,
                       self.mean, self.std, self.name)


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------

def _open_maybe_gzip(path: str):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(path: str) -> np.ndarray:
    """Parse one IDX file (big-endian) into a uint8 array.

    Accepts the label magic 0x00000801 (1-D) and the image magic
    0x00000803 (3-D). Errors name the byte offset at which parsing failed.
    """
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated before magic number at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_MAGIC_LABELS:
        ndim = 1
    elif magic == IDX_MAGIC_IMAGES:
        ndim = 3
    else:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} at offset 0 "
                             f"(expected 0x{IDX_MAGIC_LABELS:08x} or 0x{IDX_MAGIC_IMAGES:08x})")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header at offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = header_end + int(np.prod(dims))
    if len(raw) < expected:
        raise IdxFormatError(f"{path}: truncated payload at offset {len(raw)} "
                             f"(expected {expected} bytes)")
    return np.frombuffer(raw[header_end:expected], dtype=np.uint8).reshape(dims)


def save_idx(path: str, arr: np.ndarray) -> None:
    """Write a uint8 array as IDX: 1-D uses the label magic, 3-D the image magic."""
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 1:
        magic = IDX_MAGIC_LABELS
    elif arr.ndim == 3:
        magic = IDX_MAGIC_IMAGES
    else:
        raise ValueError(f"save_idx supports 1-D labels or 3-D images, got ndim={arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_mnist(root: str) -> tuple[Dataset, Dataset]:
    """Load the canonical MNIST IDX files from a local directory.

    Looks for train-images-idx3-ubyte / train-labels-idx1-ubyte /
    t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte, optionally gzipped.
    """
    def find(stem):
        for suffix in ("", ".gz"):
            p = os.path.join(root, stem + suffix)
            if os.path.exists(p):
                return p
        raise FileNotFoundError(f"MNIST file {stem}[.gz] not found under {root}")

    tr_img = load_idx(find("train-images-idx3-ubyte"))
    tr_lab = load_idx(find("train-labels-idx1-ubyte"))
    te_img = load_idx(find("t10k-images-idx3-ubyte"))
    te_lab = load_idx(find("t10k-labels-idx1-ubyte"))
    train = Dataset(tr_img[:, None].astype(np.float64) / 255.0,
                    tr_lab.astype(np.int64), classes=10, name="mnist-train")
    test = Dataset(te_img[:, None].astype(np.float64) / 255.0,
                   te_lab.astype(np.int64), classes=10, name="mnist-test")
    return train, test


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------

def _load_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of "
                         f"{CIFAR_RECORD_BYTES}-byte records")
    records = raw.size // CIFAR_RECORD_BYTES
    if records != CIFAR_BATCH_RECORDS:
        raise ValueError(f"{path}: expected {CIFAR_BATCH_RECORDS} records, found {records}")
    raw = raw.reshape(records, CIFAR_RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"{path}: label byte outside [0, 9]")
    images = raw[:, 1:].reshape(records, 3, 32, 32)  # R, G, B planes
    return images, labels


def load_cifar10(root: str) -> tuple[Dataset, Dataset]:
    """Load the CIFAR-10 binary distribution: 50k train / 10k test."""
    train_imgs, train_labs = [], []
    for fname in CIFAR_TRAIN_FILES:
        imgs, labs = _load_cifar_file(os.path.join(root, fname))
        train_imgs.append(imgs)
        train_labs.append(labs)
    te_imgs, te_labs = _load_cifar_file(os.path.join(root, CIFAR_TEST_FILE))
    train = Dataset(np.concatenate(train_imgs).astype(np.float64) / 255.0,
                    np.concatenate(train_labs), classes=10, name="cifar10-train")
    test = Dataset(te_imgs.astype(np.float64) / 255.0, te_labs, classes=10,
                   name="cifar10-test")
    return train, test


def write_cifar_batch(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    """Write one CIFAR-10 style binary batch (test fixture helper)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.shape[1:] != (3, 32, 32):
        raise ValueError(f"expected (N,3,32,32) images, got {images.shape}")
    rec = np.concatenate([labels[:, None], images.reshape(len(images), -1)], axis=1)
    rec.astype(np.uint8).tofile(path)


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------

def synth_two_moons_like(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles in 2-D, balanced classes, deterministic."""
    if n % 2 != 0:
        raise ValueError(f"synth_two_moons_like needs an even n, got {n}")
    rng = np.random.default_rng(seed)
    half = n // 2
    t = rng.random(half) * np.pi
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    pts = np.concatenate([upper, lower]) + noise * rng.standard_normal((n, 2))
    labels = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])
    order = rng.permutation(n)
    return Dataset(pts[order].reshape(n, 2, 1, 1), labels[order], classes=2,
                   name="two-moons")


def synth_blobs(n: int, seed: int, separation: float = 4.0, dim: int = 2) -> Dataset:
    """Two Gaussian blobs separated well enough for a linear classifier."""
    if n % 2 != 0:
        raise ValueError(f"synth_blobs needs an even n, got {n}")
    rng = np.random.default_rng(seed)
    half = n // 2
    center = np.zeros(dim)
    center[0] = separation / 2.0
    a = rng.standard_normal((half, dim)) - center
    b = rng.standard_normal((half, dim)) + center
    pts = np.concatenate([a, b])
    labels = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])
    order = rng.permutation(n)
    return Dataset(pts[order].reshape(n, dim, 1, 1), labels[order], classes=2,
                   name="blobs")


# seven-segment layout:  segment -> (row slice, col slice) on a 24x16 glyph box
_SEGMENTS = {
    "a": (slice(0, 3), slice(2, 14)),     # top
    "b": (slice(2, 12), slice(13, 16)),   # top right
    "c": (slice(12, 22), slice(13, 16)),  # bottom right
    "d": (slice(21, 24), slice(2, 14)),   # bottom
    "e": (slice(12, 22), slice(0, 3)),    # bottom left
    "f": (slice(2, 12), slice(0, 3)),     # top left
    "g": (slice(10, 13), slice(2, 14)),   # middle
}

_DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcfgd",
}


def _glyph(digit: int) -> np.ndarray:
    g = np.zeros((24, 16))
    for seg in _DIGIT_SEGMENTS[digit]:
        g[_SEGMENTS[seg]] = 1.0
    return g


def synth_digits(n: int, seed: int, image_size: int = 28, noise: float = 0.25,
                 max_shift: int = 2) -> Dataset:
    """Seven-segment digit images: 10 classes, with shift and noise jitter.

    Class counts are exactly balanced when n is a multiple of 10; sample
    order, shifts and noise are deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    glyphs = np.stack([_glyph(d) for d in range(10)])
    gh, gw = glyphs.shape[1:]
    labels = np.arange(n, dtype=np.int64) % 10
    labels = labels[rng.permutation(n)]
    base_r = (image_size - gh) // 2
    base_c = (image_size - gw) // 2
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    images = np.zeros((n, 1, image_size, image_size))
    for i in range(n):
        r = base_r + int(shifts[i, 0])
        c = base_c + int(shifts[i, 1])
        images[i, 0, r:r + gh, c:c + gw] = glyphs[labels[i]]
    images += noise * rng.standard_normal(images.shape)
    images = np.clip(images, 0.0, 1.5)
    return Dataset(images, labels, classes=10, name="synth-digits")


# ---------------------------------------------------------------------------
# preprocessing and shuffling
# ---------------------------------------------------------------------------

def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Per-channel standardization with statistics from the train split only."""
    mean = train.images.mean(axis=(0, 2, 3), keepdims=True)
    std = train.images.std(axis=(0, 2, 3), keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    out = []
    for ds in (train, *others):
        out.append(Dataset((ds.images - mean) / std, ds.labels, ds.classes,
                           mean.reshape(-1), std.reshape(-1), ds.name))
    return tuple(out)


def shuffle_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """A permutation of range(n); always a bijection."""
    return rng.permutation(n)
