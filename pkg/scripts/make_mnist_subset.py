"""Convert the digit JSON files of the npm ``mnist`` package into MNIST IDX files.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 1,000 genuine
MNIST digits per class as flattened 28x28 intensities in [0, 1] rounded to three
decimals. Rounding is coarser than 1/255, so the original bytes are recovered
exactly by ``round(v * 255)``.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist_subset.py package/src/digits data/mnist-10k
"""
import argparse
import gzip
import json
from pathlib import Path

import numpy as np

from cidfd.data.idx import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        flat = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        imgs = np.rint(flat.reshape(-1, 28, 28) * 255).astype(np.uint8)
        images.append(imgs)
        labels.append(np.full(len(imgs), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)

    # interleave classes like the original training file
    order = np.random.default_rng(args.seed).permutation(len(labels))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in (("train-images-idx3-ubyte.gz", images[order]),
                      ("train-labels-idx1-ubyte.gz", labels[order])):
        with gzip.GzipFile(args.out_dir / name, "wb", mtime=0) as fh:
            write_idx(fh, arr)
    print(f"wrote {len(labels)} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
