"""Dataset ingestion: MNIST in IDX format and synthetic Gaussian blobs."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from slsim.errors import IngestionError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_SPLITS = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_features(self) -> int:
        return self.train_x.shape[1]

    @property
    def n_classes(self) -> int:
        return int(max(self.train_y.max(), self.test_y.max())) + 1


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except (OSError, EOFError) as exc:
        raise IngestionError(f"cannot read: {exc}", path=path) from exc


def parse_idx(raw: bytes, expected_magic: int, path=None) -> np.ndarray:
    """Decode an unsigned-byte IDX blob (big-endian header)."""
    if len(raw) < 4:
        raise IngestionError("truncated header", path=path, offset=len(raw))
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IngestionError(f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}",
                             path=path, offset=0)
    n_dims = magic & 0xFF
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise IngestionError("truncated dimension header", path=path, offset=len(raw))
    dims = struct.unpack_from(">" + "I" * n_dims, raw, 4)
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise IngestionError(f"truncated payload: expected {size} bytes", path=path, offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise IngestionError(f"missing {stem}[.gz]", path=directory)


def load_idx_pair(images_path, labels_path):
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if labels.shape[0] != images.shape[0]:
        raise IngestionError(f"{labels.shape[0]} labels for {images.shape[0]} images", path=labels_path)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def load_mnist(directory, n_train: Optional[int] = None, n_test: Optional[int] = None) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError("not a directory", path=directory)
    out = {}
    for split, (img, lab) in _SPLITS.items():
        out[split] = load_idx_pair(_find(directory, img), _find(directory, lab))
    (tx, ty), (vx, vy) = out["train"], out["test"]
    return Dataset(tx[:n_train], ty[:n_train], vx[:n_test], vy[:n_test])


def synthetic_blobs(n_classes: int, dim: int, separation: float, n_train: int, n_test: int,
                    seed: int) -> Dataset:
    """Unit-variance Gaussian classes whose centers are pairwise ``separation`` apart
    (when ``n_classes <= dim``)."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, max(n_classes, 1))))
    centers = basis[:, :n_classes].T * (separation / np.sqrt(2.0))

    def draw(n):
        y = np.arange(n) % n_classes
        rng.shuffle(y)
        return centers[y] + rng.normal(size=(n, dim)), y.astype(np.int64)

    tx, ty = draw(n_train)
    vx, vy = draw(n_test)
    return Dataset(tx, ty, vx, vy)


def load_dataset(source, seed: int = 0) -> Dataset:
    """``source`` is a :class:`~slsim.harness.config.DatasetConfig`."""
    if source.source == "mnist_idx":
        return load_mnist(source.path, source.n_train, source.n_test)
    data = synthetic_blobs(source.n_classes, source.dim, source.separation,
                           source.synthetic_train, source.synthetic_test, seed)
    if source.n_train is not None or source.n_test is not None:
        data = Dataset(data.train_x[:source.n_train], data.train_y[:source.n_train],
                       data.test_x[:source.n_test], data.test_y[:source.n_test])
    return data
