#!/usr/bin/env python3
"""Write a small MNIST set in IDX format from the 5000-digit sample bundled with mlxtend.

    python scripts/make_desk_mnist.py data/desk --test-size 1000 --seed 0

The sample is shuffled with ``--seed``; the first ``--test-size`` digits become
the t10k split and the rest the train split.
"""
import argparse
import gzip
import struct
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data


def write_idx(path: Path, magic: int, dims, payload: np.ndarray, compress: bool) -> None:
    raw = struct.pack(f">I{len(dims)}I", magic, *dims) + payload.astype(np.uint8).tobytes()
    if compress:
        path = path.with_name(path.name + ".gz")
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-size", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gzip", action="store_true")
    args = ap.parse_args()

    x, y = mnist_data()
    order = np.random.default_rng(args.seed).permutation(len(y))
    splits = {"t10k": order[: args.test_size], "train": order[args.test_size :]}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, idx in splits.items():
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte", 0x803, (len(idx), 28, 28), x[idx], args.gzip)
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte", 0x801, (len(idx),), y[idx], args.gzip)
        print(f"{name}: {len(idx)} digits")


if __name__ == "__main__":
    main()
