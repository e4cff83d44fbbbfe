#!/usr/bin/env python3
"""Convert the digit JSON files of the npm `mnist` package into gzipped IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist
"""
import argparse
import gzip
import json
import struct
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    args = ap.parse_args()

    pixels = bytearray()
    labels = bytearray()
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        count = len(raw) // 784
        pixels += bytes(min(255, max(0, round(v * 255))) for v in raw[: count * 784])
        labels += bytes([digit]) * count

    n = len(labels)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with gzip.open(args.out_dir / "images-idx3-ubyte.gz", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28) + pixels)
    with gzip.open(args.out_dir / "labels-idx1-ubyte.gz", "wb") as f:
        f.write(struct.pack(">II", 0x801, n) + labels)
    print(f"wrote {n} images to {args.out_dir}")


if __name__ == "__main__":
    main()
