"""MNIST in IDX format.

Images come out as float32 ``(N, 1, 28, 28)`` in ``[0, 1]`` (byte / 255) and
labels as int64. Gzip-compressed files are detected by their header.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_DIR_ENV = "BORDERNET_MNIST_DIR"

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def content_hash(images: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(images, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "unknown"
    occlusion: object = None  # OcclusionSpec that produced this set, None if clean
    content_hash: str = field(default="")

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim == 3:
            self.images = self.images[:, None]
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if not self.content_hash:
            self.content_hash = content_hash(self.images, self.labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def is_clean(self) -> bool:
        return self.occlusion is None

    def subset(self, n: int) -> "Dataset":
        """First ``n`` examples; provenance is carried over."""
        return Dataset(self.images[:n], self.labels[:n], self.split, self.occlusion)


def _read(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx_images(raw: bytes) -> np.ndarray:
    if len(raw) < 16:
        raise TruncatedFileError("IDX image header truncated")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"IDX image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise TruncatedFileError(f"IDX image file holds {len(raw)} bytes, header promises {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise TruncatedFileError("IDX label header truncated")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"IDX label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(raw) < 8 + n:
        raise TruncatedFileError(f"IDX label file holds {len(raw)} bytes, header promises {8 + n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path, split: str = "unknown") -> Dataset:
    pixels = parse_idx_images(_read(images_path))
    labels = parse_idx_labels(_read(labels_path))
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{pixels.shape[0]} images but {labels.shape[0]} labels")
    images = (pixels.astype(np.float32) / np.float32(255.0))[:, None]
    return Dataset(images, labels.astype(np.int64), split)


def data_dir(directory=None) -> Path:
    if directory is not None:
        return Path(directory)
    return Path(os.environ.get(DATA_DIR_ENV, "data/mnist"))


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no {stem}[.gz] under {directory} (set {DATA_DIR_ENV})")


def load_mnist(split: str, directory=None) -> Dataset:
    """Load the ``train`` or ``test`` split from ``directory`` or ``$BORDERNET_MNIST_DIR``."""
    if split not in SPLIT_FILES:
        raise ValueError(f"unknown split {split!r}")
    d = data_dir(directory)
    img_stem, lbl_stem = SPLIT_FILES[split]
    return load_idx(_find(d, img_stem), _find(d, lbl_stem), split)


def export_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write ``dataset`` back as uncompressed IDX (pixels rounded to bytes)."""
    imgs = dataset.images[:, 0]
    n, rows, cols = imgs.shape
    pixels = np.rint(np.clip(imgs, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )
