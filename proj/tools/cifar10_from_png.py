#!/usr/bin/env python3
"""Rebuild CIFAR-10 binary batches from the tfjs-cifar10 PNG sprites.

Each sprite is a 10000 x 1024 RGB image (one sample per row). The output
uses the standard 3073-byte record: label, then the R, G and B planes.

usage: cifar10_from_png.py <package dir> <output dir>
"""

import argparse
import json
import pathlib

import numpy as np
from PIL import Image


def convert(png, labels, out):
    a = np.asarray(Image.open(png).convert("RGB"))
    if a.shape != (10000, 1024, 3):
        raise SystemExit(f"{png}: unexpected sprite shape {a.shape}")
    rec = np.empty((10000, 3073), np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = a.transpose(0, 2, 1).reshape(10000, 3072)
    rec.tofile(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    a = ap.parse_args()
    # the upstream file names are spelled this way
    train = json.loads((a.package / "train_lables.json").read_text())
    test = json.loads((a.package / "test_lables.json").read_text())
    a.out.mkdir(parents=True, exist_ok=True)
    for i in range(5):
        convert(a.package / f"data_batch_{i + 1}.png", train[i * 10000:(i + 1) * 10000],
                a.out / f"data_batch_{i + 1}.bin")
    convert(a.package / "test_batch.png", test, a.out / "test_batch.bin")
    print(f"wrote {len(train)} training and {len(test)} test records to {a.out}")


if __name__ == "__main__":
    main()
