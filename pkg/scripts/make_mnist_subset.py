"""Build the 1,000/500 MNIST IDX subset shipped under data/mnist_subset/.

Source: the 5,000-image MNIST sample bundled with mlxtend
(mlxtend/data/data/mnist_5k.csv.gz, BSD-3-Clause). Usage:

    python scripts/make_mnist_subset.py path/to/mlxtend-*.whl
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from annealvi.data import idx_image_bytes

OUT = Path(__file__).resolve().parent.parent / "data" / "mnist_subset"


def main(wheel):
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.genfromtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    order = np.random.default_rng(20200601).permutation(images.shape[0])
    OUT.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", order[:1000]), ("test", order[1000:1500])):
        path = OUT / f"{name}-images-idx3-ubyte.gz"
        # mtime=0 keeps the archive byte-stable
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            gz.write(idx_image_bytes(images[idx]))
        print(path, len(idx))


if __name__ == "__main__":
    main(sys.argv[1])
