"""Build small MNIST IDX files from the 5000-image sample bundled with mlxtend.

The sample holds 500 images per digit. They are shuffled with a fixed seed
and split into train and test files with the standard IDX names, so the
``mnist`` subcommand can read them exactly like the full dataset.

    python3 scripts/make_mnist_idx.py --out data/mnist
"""

import argparse
import gzip
import os
from pathlib import Path

import numpy as np

from airdp.data import write_idx


def bundled_csv() -> Path:
    import mlxtend

    return Path(os.path.dirname(mlxtend.__file__)) / "data" / "data" / "mnist_5k.csv.gz"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    with gzip.open(bundled_csv(), "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    images, labels = raw[:, :-1], raw[:, -1]
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order].reshape(-1, 28, 28), labels[order]
    test, train = slice(0, args.n_test), slice(args.n_test, None)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[train])
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[train])
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[test])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[test])
    print(f"wrote {len(labels) - args.n_test} train and {args.n_test} test images to {out}")


if __name__ == "__main__":
    main()
