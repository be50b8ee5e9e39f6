"""Write MNIST-format IDX files from the 5000 real digits bundled with mlxtend.

Use this when the canonical train-images/train-labels files are not at hand:

    python3 scripts/make_mnist_fallback.py --out data/mnist5k
    ibmcr repro d --mnist-dir data/mnist5k --set dataset.subsample=5000
"""

import argparse

from ibmcr.data import load_mnist_idx, write_bundled_mnist_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist5k")
    args = ap.parse_args()
    images, labels = write_bundled_mnist_idx(args.out)
    ds = load_mnist_idx(images, labels)
    print(f"wrote {ds.num_samples} images to {args.out} (checksum {ds.checksum[:16]})")


if __name__ == "__main__":
    main()
