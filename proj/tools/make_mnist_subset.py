#!/usr/bin/env python3
"""Repackage the digits shipped with the `mnist` npm package as IDX files.

The package stores 10,000 MNIST digits as per-class JSON arrays of pixel
intensities in [0, 1] (three decimals).  Pixels are mapped back to bytes with
round(v * 255), which recovers the original 8-bit values exactly.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist
"""

import json
import random
import struct
import sys
from pathlib import Path

TRAIN_FRACTION = 0.8
SEED = 20200


def load_digits(src: Path):
    samples = []
    for label in range(10):
        flat = json.loads((src / f"{label}.json").read_text())["data"]
        if len(flat) % 784:
            raise SystemExit(f"{label}.json: length {len(flat)} is not a multiple of 784")
        pixels = bytes(min(255, max(0, round(v * 255))) for v in flat)
        per_class = [pixels[i:i + 784] for i in range(0, len(pixels), 784)]
        samples.append(per_class)
    return samples


def write_idx(prefix: Path, images, labels):
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    per_class = load_digits(src)

    train, test = [], []
    for label, imgs in enumerate(per_class):
        cut = int(len(imgs) * TRAIN_FRACTION)
        train += [(img, label) for img in imgs[:cut]]
        test += [(img, label) for img in imgs[cut:]]

    rng = random.Random(SEED)
    rng.shuffle(train)
    rng.shuffle(test)

    write_idx(dst / "train", [i for i, _ in train], [l for _, l in train])
    write_idx(dst / "t10k", [i for i, _ in test], [l for _, l in test])
    print(f"train={len(train)} test={len(test)} -> {dst}")


if __name__ == "__main__":
    main()
