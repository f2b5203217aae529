#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Write a small Fashion-MNIST subset as IDX files.

Reads the per-class JSON dumps shipped by the `fashion-mnist` npm package
(src/clothes/<label>.json, each {"data": [[784 bytes], ...]}) and emits
`images-idx3-ubyte` / `labels-idx1-ubyte` with samples interleaved by class:
sample k has label k % 10 and is image k // 10 of that class.
"""
import argparse
import json
import pathlib
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("clothes_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--per-class", type=int, default=100)
    args = ap.parse_args()

    classes = [json.loads((args.clothes_dir / f"{c}.json").read_text())["data"]
               for c in range(10)]
    images, labels = bytearray(), bytearray()
    for k in range(args.per_class):
        for c in range(10):
            pixels = classes[c][k]
            assert len(pixels) == 784
            images += bytes(pixels)
            labels.append(c)
    count = len(labels)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x803, count, 28, 28) + images)
    (args.out_dir / "labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x801, count) + labels)


if __name__ == "__main__":
    main()
