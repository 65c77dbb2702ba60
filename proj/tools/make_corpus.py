#!/usr/bin/env python3
"""Build the small photo corpus under tests/data from bundled sample images.

Crops come from the example photographs shipped with scikit-image,
scikit-learn and matplotlib, so no download is needed. Each split draws from
different source photos. Also writes the watermark image.

    python3 tools/make_corpus.py [--out tests/data] [--size 64]
"""

import argparse
import os

import numpy as np
from PIL import Image, ImageDraw

import matplotlib.cbook
import skimage.data
from sklearn.datasets import load_sample_images

TRAIN = ["astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field", "retina",
         "stereo_motorcycle", "camera", "brick", "grass", "gravel", "coins"]
VAL = ["china", "immunohistochemistry", "moon", "clock"]
TEST = ["flower", "grace_hopper", "cell", "colorwheel"]

CROPS = {"train": 7, "val": 4, "test": 4}


def load(name):
    if name in ("china", "flower"):
        images = load_sample_images()
        idx = [os.path.basename(f) for f in images.filenames].index(name + ".jpg")
        img = images.images[idx]
    elif name == "grace_hopper":
        with matplotlib.cbook.get_sample_data("grace_hopper.jpg") as f:
            img = np.asarray(Image.open(f).convert("RGB"))
    else:
        img = getattr(skimage.data, name)()
        if isinstance(img, tuple):
            img = img[0]
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return Image.fromarray(img[..., :3].astype(np.uint8))


def crops(img, count, size, rng):
    w, h = img.size
    for _ in range(count):
        side = int(rng.integers(min(96, min(w, h)), min(w, h, 320) + 1))
        x = int(rng.integers(0, w - side + 1))
        y = int(rng.integers(0, h - side + 1))
        yield img.crop((x, y, x + side, y + side)).resize((size, size), Image.BILINEAR)


def watermark(size):
    # A bold geometric mark with enough structure to judge extraction by eye.
    s = 256
    im = Image.new("RGB", (s, s), (0, 0, 0))
    d = ImageDraw.Draw(im)
    d.ellipse((24, 24, s - 24, s - 24), outline=(255, 255, 255), width=18)
    d.polygon([(64, 80), (96, 176), (128, 112), (160, 176), (192, 80)],
              outline=(255, 255, 255), width=14)
    d.rectangle((100, 196, 156, 212), fill=(255, 255, 255))
    return im.resize((size, size), Image.BILINEAR)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "tests", "data"))
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=20240501)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    for split, names in (("train", TRAIN), ("val", VAL), ("test", TEST)):
        out = os.path.join(args.out, "corpus", split)
        os.makedirs(out, exist_ok=True)
        for name in names:
            img = load(name)
            for i, crop in enumerate(crops(img, CROPS[split], args.size, rng)):
                crop.save(os.path.join(out, f"{name}_{i}.png"))
    watermark(args.size).save(os.path.join(args.out, "watermark.png"))


if __name__ == "__main__":
    main()
