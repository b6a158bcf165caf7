#!/usr/bin/env python3
"""Convert the npm `mnist` package's bundled digit JSON into IDX files.

The package (https://www.npmjs.com/package/mnist, version 1.1.0) ships 10k
real MNIST digits as JSON: one file per digit class, each holding flat 784-
value rows scaled to [0, 1] with three decimals. This script recovers the
original bytes (round(v * 255)) and writes a standard IDX image/label pair:

    mnist-images-idx3-ubyte   magic 0x00000803, dims N x 28 x 28, uint8
    mnist-labels-idx1-ubyte   magic 0x00000801, dim  N,          uint8

Usage:
    npm install mnist@1.1.0
    python3 tools/make_mnist_idx.py \
        --src node_modules/mnist/src/digits --out data/mnist

Rows are emitted grouped by digit (0..9) in file order, which is
deterministic; the experiment harness does its own seeded shuffling.
"""

import argparse
import json
import pathlib
import struct
import sys

IMAGE_SIDE = 28
IMAGE_SIZE = IMAGE_SIDE * IMAGE_SIDE


def load_digit(path: pathlib.Path) -> list[bytes]:
    with path.open() as fh:
        payload = json.load(fh)
    flat = payload["data"] if isinstance(payload, dict) else payload
    if len(flat) % IMAGE_SIZE != 0:
        raise ValueError(f"{path}: {len(flat)} values is not a multiple of {IMAGE_SIZE}")
    rows = []
    for start in range(0, len(flat), IMAGE_SIZE):
        row = flat[start:start + IMAGE_SIZE]
        rows.append(bytes(min(255, max(0, round(v * 255))) for v in row))
    return rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--src", required=True,
                        help="directory with the package's 0.json .. 9.json")
    parser.add_argument("--out", default="data/mnist",
                        help="output directory for the IDX pair")
    args = parser.parse_args()

    src = pathlib.Path(args.src)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    images: list[bytes] = []
    labels: list[int] = []
    for digit in range(10):
        rows = load_digit(src / f"{digit}.json")
        if not rows:
            raise ValueError(f"digit {digit} has no samples")
        images.extend(rows)
        labels.extend([digit] * len(rows))
        print(f"digit {digit}: {len(rows)} samples")

    count = len(images)
    with (out / "mnist-images-idx3-ubyte").open("wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, IMAGE_SIDE, IMAGE_SIDE))
        for row in images:
            fh.write(row)
    with (out / "mnist-labels-idx1-ubyte").open("wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, count))
        fh.write(bytes(labels))

    print(f"wrote {count} samples to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
