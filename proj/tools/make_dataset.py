# Copyright (c) the shallowcodec project authors.
#
# Use of this source code is governed by the Apache License, Version 2.0,
# which can be found in the LICENSE file.
"""Builds the PPM patch dataset used by training and the acceptance tests.

Tiles a handful of public-domain photographs shipped with scikit-image into
train tiles and a disjoint held-out test set. Output is binary PPM (P6),
the only image format the codec reads.

Usage: python3 tools/make_dataset.py [out_dir]
"""

import os
import sys

import numpy as np
from skimage import data as skdata


def save_ppm(path, img):
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def photos():
    names = [
        "astronaut",
        "chelsea",
        "coffee",
        "rocket",
        "cat",
        "hubble_deep_field",
        "immunohistochemistry",
        "retina",
    ]
    for name in names:
        img = getattr(skdata, name)()
        if img.ndim == 3 and img.shape[2] == 3:
            yield name, img


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data"
    train_dir = os.path.join(out, "train")
    test_dir = os.path.join(out, "test")
    os.makedirs(train_dir, exist_ok=True)
    os.makedirs(test_dir, exist_ok=True)

    tile = 96
    tiles = []
    for name, img in photos():
        h, w, _ = img.shape
        for y in range(0, h - tile + 1, tile):
            for x in range(0, w - tile + 1, tile):
                tiles.append(img[y : y + tile, x : x + tile])

    rng = np.random.default_rng(7)
    order = rng.permutation(len(tiles))

    # Held-out 64x64 test images come from tiles excluded from training.
    n_test = 20
    for i in range(n_test):
        t = tiles[order[i]]
        save_ppm(os.path.join(test_dir, "e%02d.ppm" % i), t[:64, :64])

    n_train = min(220, len(tiles) - n_test)
    if n_train < 200:
        raise SystemExit("not enough tiles for a 200-image training set")
    for j in range(n_train):
        t = tiles[order[n_test + j]]
        save_ppm(os.path.join(train_dir, "t%03d.ppm" % j), t)

    print("wrote %d train tiles and %d test images under %s" % (n_train, n_test, out))


if __name__ == "__main__":
    main()
