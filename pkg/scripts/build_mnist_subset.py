"""Convert the 10,000-digit MNIST sample bundled in the npm ``mnist`` package
into gzipped IDX files (8000 train / 2000 test).

    npm pack mnist@1.1.0
    python scripts/build_mnist_subset.py mnist-1.1.0.tgz data/mnist-10k

Pixels are stored in the package as ``round(byte / 255, 3)``, so
``round(value * 255)`` recovers the original byte exactly.
"""

import argparse
import gzip
import json
import struct
import tarfile
from pathlib import Path

import numpy as np

N_TRAIN = 8000


def read_digits(tarball):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            raw = json.load(tar.extractfile(f"package/src/digits/{digit}.json"))["data"]
            arr = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).astype(np.uint8)
            arr = arr.reshape(-1, 28, 28)
            images.append(arr)
            labels.append(np.full(len(arr), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", s) for s in array.shape)
    # mtime=0 keeps the archive bytes reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(header + array.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("tarball")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = read_digits(args.tarball)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[:N_TRAIN], 0x00000803)
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[:N_TRAIN], 0x00000801)
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[N_TRAIN:], 0x00000803)
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[N_TRAIN:], 0x00000801)
    print(f"wrote {N_TRAIN} train / {len(labels) - N_TRAIN} test examples to {out}")


if __name__ == "__main__":
    main()
