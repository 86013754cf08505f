#!/usr/bin/env python3
"""Pack the digits shipped in the npm `mnist` package into IDX files.

The package bundles 10,000 MNIST digits as per-class JSON arrays of floats
(pixel / 255, rounded to three decimals). This script restores the byte
values, shuffles with a fixed seed and writes a train/test split in the
standard IDX layout (magic 0x00000803 / 0x00000801, big-endian dims).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/prepare_mnist.py package/src/digits data/mnist
"""
import argparse
import json
import pathlib
import random
import struct


def write_images(path, images, rows=28, cols=28):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240101)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        data = json.loads((pathlib.Path(args.digits_dir) / f"{digit}.json").read_text())["data"]
        count = len(data) // 784
        for i in range(count):
            px = [min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
            samples.append((px, digit))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.test], samples[args.test:]
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", train), ("t10k", test)):
        write_images(out / f"{name}-images-idx3-ubyte", [s[0] for s in part])
        write_labels(out / f"{name}-labels-idx1-ubyte", [s[1] for s in part])
        print(f"{name}: {len(part)} samples")


if __name__ == "__main__":
    main()
