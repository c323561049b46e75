#!/usr/bin/env python3
"""Build IDX files from the digit arrays shipped in the `mnist` npm package.

The package (MIT, github.com/cazala/mnist) stores 10,000 MNIST digits as
JSON arrays of pixel/255 rounded to three decimals. Three decimals is finer
than one grey level, so rounding back to bytes recovers the original pixels.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist10k --fixture data/fixture
"""
import argparse
import gzip
import json
import pathlib
import struct

import numpy as np


def write_idx(path: pathlib.Path, images: np.ndarray, labels: np.ndarray, compress: bool) -> None:
    opener = gzip.open if compress else open
    suffix = ".gz" if compress else ""
    n, h, w = images.shape
    with opener(path / f"images-idx3-ubyte{suffix}", "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with opener(path / f"labels-idx1-ubyte{suffix}", "wb") as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--fixture", type=pathlib.Path)
    ap.add_argument("--fixture-size", type=int, default=512)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        values = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        pixels = np.rint(values * 255.0)
        assert np.abs(pixels / 255.0 - values).max() < 1e-3
        count = len(values) // 784
        images.append(pixels.reshape(count, 28, 28))
        labels.append(np.full(count, digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir, images, labels, compress=True)
    if args.fixture:
        args.fixture.mkdir(parents=True, exist_ok=True)
        k = args.fixture_size
        write_idx(args.fixture, images[:k], labels[:k], compress=False)
    print(f"wrote {len(labels)} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
