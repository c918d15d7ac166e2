"""Convert the digit set bundled with the ``mnist`` npm package into IDX files.

The npm package (MIT licensed, https://github.com/cazala/mnist) ships 10,000
MNIST digits as per-class JSON arrays of pixel intensities in [0, 1] rounded to
three decimals. This script restores the byte values and writes gzipped
big-endian IDX files so the rest of the tooling can treat them like the
original distribution.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/build_mnist10k.py package/src/digits data/mnist10k
"""

import argparse
import json
from pathlib import Path

import numpy as np

from weakenlab.data import Dataset, write_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        with open(args.digits_dir / f"{digit}.json") as f:
            flat = np.asarray(json.load(f)["data"], dtype=np.float64)
        block = np.rint(flat * 255).clip(0, 255).astype(np.uint8).reshape(-1, 28, 28)
        images.append(block)
        labels.append(np.full(len(block), digit, dtype=np.uint8))

    images = np.concatenate(images)
    labels = np.concatenate(labels)
    ds = Dataset(inputs=images[:, None].astype(np.float64) / 255.0, labels=labels.astype(np.int64),
                 num_classes=10, provenance="npm:mnist@1.1.0")

    args.out_dir.mkdir(parents=True, exist_ok=True)
    img_path = args.out_dir / "images-idx3-ubyte.gz"
    lbl_path = args.out_dir / "labels-idx1-ubyte.gz"
    write_idx(ds, img_path, lbl_path)
    print(f"wrote {len(labels)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
