#!/usr/bin/env python3
"""Convert MNIST-style IDX files into the raw tensor/label files collabdm reads.

Input directory must hold the four IDX files (optionally gzipped):
train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
t10k-labels-idx1-ubyte. Output: train-images.cdt, train-labels.cdl,
test-images.cdt, test-labels.cdl.

Images are stored as u8 pixels (dtype tag 1), shape N x 1 x H x W.
"""

import argparse
import gzip
import struct
import sys
from pathlib import Path

SPLITS = {"train": "train", "test": "t10k"}


def open_idx(directory: Path, stem: str):
    for name in (stem, stem + ".gz"):
        path = directory / name
        if path.exists():
            return gzip.open(path, "rb") if name.endswith(".gz") else open(path, "rb")
    sys.exit(f"missing {stem}[.gz] in {directory}")


def read_idx(directory: Path, stem: str):
    with open_idx(directory, stem) as f:
        zero, dtype, rank = struct.unpack(">HBB", f.read(4))
        if zero != 0 or dtype != 0x08:
            sys.exit(f"{stem}: not an unsigned-byte IDX file")
        dims = struct.unpack(">" + "I" * rank, f.read(4 * rank))
        data = f.read()
    count = 1
    for d in dims:
        count *= d
    if len(data) != count:
        sys.exit(f"{stem}: expected {count} bytes of data, found {len(data)}")
    return dims, data


def write_images(path: Path, dims, data: bytes):
    n, h, w = dims
    shape = (n, 1, h, w)
    with open(path, "wb") as f:
        f.write(b"CDT1")
        f.write(struct.pack("<BB", 1, len(shape)))
        f.write(struct.pack("<" + "I" * len(shape), *shape))
        f.write(data)


def write_labels(path: Path, data: bytes):
    with open(path, "wb") as f:
        f.write(b"CDL1")
        f.write(struct.pack("<I", len(data)))
        f.write(struct.pack("<" + "H" * len(data), *data))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("idx_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for split, prefix in SPLITS.items():
        dims, images = read_idx(args.idx_dir, f"{prefix}-images-idx3-ubyte")
        (n_labels,), labels = read_idx(args.idx_dir, f"{prefix}-labels-idx1-ubyte")
        if len(dims) != 3 or dims[0] != n_labels:
            sys.exit(f"{split}: {dims} images but {n_labels} labels")
        write_images(args.out_dir / f"{split}-images.cdt", dims, images)
        write_labels(args.out_dir / f"{split}-labels.cdl", labels)
        print(f"{split}: {dims[0]} images of {dims[1]}x{dims[2]}")


if __name__ == "__main__":
    main()
