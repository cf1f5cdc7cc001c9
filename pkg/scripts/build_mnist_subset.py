#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm ``mnist`` package into IDX files.

The npm package bundles ~10,000 real MNIST digits (pixel values rounded to three
decimals). This writes a stratified train/test split as gzipped IDX so the
regular loader can read it:

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist10k
"""
from __future__ import annotations

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def write_idx(path: Path, array: np.ndarray, magic: int) -> None:
    header = struct.pack(">i", magic) + b"".join(struct.pack(">i", d) for d in array.shape)
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header)
        f.write(array.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        pixels = np.rint(np.asarray(raw, dtype=np.float64).reshape(-1, 28, 28) * 255.0)
        pixels = np.clip(pixels, 0, 255).astype(np.uint8)
        order = rng.permutation(len(pixels))
        n_test = int(round(args.test_fraction * len(pixels)))
        test_x.append(pixels[order[:n_test]])
        train_x.append(pixels[order[n_test:]])
        test_y.append(np.full(n_test, digit, dtype=np.uint8))
        train_y.append(np.full(len(pixels) - n_test, digit, dtype=np.uint8))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng.permutation(len(y))
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", x[perm], 0x00000803)
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", y[perm], 0x00000801)
        print(f"{name}: {len(y)} samples")


if __name__ == "__main__":
    main()
