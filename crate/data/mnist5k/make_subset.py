"""Rebuild the 5k-sample MNIST subset in IDX format.

Source: mlxtend/data/data/mnist_5k.csv.gz from the mlxtend wheel (500 images
per digit, 784 pixel columns followed by the label). Per digit, the first 400
images go to the training split and the remaining 100 to the test split. Each
split is then shuffled with a fixed seed so digits are interleaved.
"""
import gzip
import struct
import sys

import numpy as np


def write_idx(path, arr, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in arr.shape:
            f.write(struct.pack(">I", d))
        f.write(arr.astype(np.uint8).tobytes())


def main(csv_gz):
    data = np.loadtxt(gzip.open(csv_gz, "rt"), delimiter=",", dtype=np.int64)
    x, y = data[:, :-1], data[:, -1]
    train, test = [], []
    for digit in range(10):
        idx = np.flatnonzero(y == digit)
        train.extend(idx[:400])
        test.extend(idx[400:])
    rng = np.random.default_rng(20240101)
    train = rng.permutation(train)
    test = rng.permutation(test)
    write_idx("train-images-idx3-ubyte", x[train].reshape(-1, 28, 28), 0x00000803)
    write_idx("train-labels-idx1-ubyte", y[train], 0x00000801)
    write_idx("t10k-images-idx3-ubyte", x[test].reshape(-1, 28, 28), 0x00000803)
    write_idx("t10k-labels-idx1-ubyte", y[test], 0x00000801)


if __name__ == "__main__":
    main(sys.argv[1])
