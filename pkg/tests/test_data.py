import gzip
import struct

import numpy as np
import pytest

from slsim.errors import IngestionError
from slsim.harness.config import DatasetConfig
from slsim.harness.data import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    load_dataset,
    load_idx_pair,
    load_mnist,
    parse_idx,
    synthetic_blobs,
)

from conftest import MNIST_DIR


def idx_bytes(magic, dims, payload):
    return struct.pack(">I" + "I" * len(dims), magic, *dims) + bytes(payload)


def test_parse_image_header():
    raw = idx_bytes(IMAGE_MAGIC, (2, 3, 3), range(18))
    arr = parse_idx(raw, IMAGE_MAGIC)
    assert arr.shape == (2, 3, 3) and arr[1, 2, 2] == 17


def test_header_bytes_match_format():
    raw = idx_bytes(IMAGE_MAGIC, (60000, 28, 28), b"")
    assert raw[:4] == bytes([0, 0, 8, 3])


def test_bad_magic_reports_offset():
    with pytest.raises(IngestionError) as err:
        parse_idx(idx_bytes(0x00000802, (1,), [0]), LABEL_MAGIC, path="x")
    assert err.value.offset == 0 and err.value.path == "x"


def test_truncated_payload_reports_offset():
    raw = idx_bytes(IMAGE_MAGIC, (2, 2, 2), range(5))
    with pytest.raises(IngestionError) as err:
        parse_idx(raw, IMAGE_MAGIC)
    assert err.value.offset == len(raw)
    with pytest.raises(IngestionError):
        parse_idx(b"\x00\x00", IMAGE_MAGIC)


def _write_pair(tmp_path, n_img, n_lab, gz=True):
    opener = gzip.open if gz else open
    suffix = ".gz" if gz else ""
    img = tmp_path / f"imgs{suffix}"
    lab = tmp_path / f"labs{suffix}"
    with opener(img, "wb") as fh:
        fh.write(idx_bytes(IMAGE_MAGIC, (n_img, 2, 2), [255] * (4 * n_img)))
    with opener(lab, "wb") as fh:
        fh.write(idx_bytes(LABEL_MAGIC, (n_lab,), [1] * n_lab))
    return img, lab


def test_idx_pair_scaling(tmp_path):
    x, y = load_idx_pair(*_write_pair(tmp_path, 3, 3))
    assert x.shape == (3, 4) and np.all(x == 1.0) and y.tolist() == [1, 1, 1]
    x, _ = load_idx_pair(*_write_pair(tmp_path, 2, 2, gz=False))
    assert x.shape == (2, 4)


def test_label_count_mismatch(tmp_path):
    with pytest.raises(IngestionError):
        load_idx_pair(*_write_pair(tmp_path, 3, 2))


def test_missing_directory_and_files(tmp_path):
    with pytest.raises(IngestionError):
        load_mnist(tmp_path / "nope")
    with pytest.raises(IngestionError):
        load_mnist(tmp_path)


def test_bundled_mnist_subset():
    data = load_mnist(MNIST_DIR)
    assert data.train_x.shape == (8000, 784) and data.test_x.shape == (2000, 784)
    assert data.n_classes == 10
    assert 0.0 <= data.train_x.min() and data.train_x.max() <= 1.0


def test_synthetic_blobs_reproducible():
    a = synthetic_blobs(2, 20, 5.0, 400, 100, seed=3)
    b = synthetic_blobs(2, 20, 5.0, 400, 100, seed=3)
    assert np.array_equal(a.train_x, b.train_x) and np.array_equal(a.test_y, b.test_y)
    centers = [a.train_x[a.train_y == c].mean(axis=0) for c in range(2)]
    assert np.linalg.norm(centers[0] - centers[1]) == pytest.approx(5.0, abs=0.5)


def test_load_dataset_truncates():
    cfg = DatasetConfig(source="synthetic", n_train=50, n_test=10)
    data = load_dataset(cfg, seed=0)
    assert data.train_x.shape[0] == 50 and data.test_x.shape[0] == 10
