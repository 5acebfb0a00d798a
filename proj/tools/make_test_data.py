"""Builds the fixtures in tests/data from scikit-image sample photos.

natural96.ppm   one 96x96 RGB image
patches/        32x32 RGB crops in the metadata.json + train.bin/test.bin layout,
                one class per source photo
"""
import json
import pathlib
import sys

import numpy as np
import skimage.data as data
from skimage.transform import resize

SOURCES = ["astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field", "immunohistochemistry", "retina"]
TRAIN_PER_CLASS = 80
TEST_PER_CLASS = 10


def to_u8(img):
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img):
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def records(crops):
    out = bytearray()
    for label, img in crops:
        out.append(label)
        out += np.ascontiguousarray(img.transpose(2, 0, 1)).tobytes()
    return bytes(out)


def main(root):
    root = pathlib.Path(root)
    root.mkdir(parents=True, exist_ok=True)
    astro = data.astronaut()
    write_ppm(root / "natural96.ppm", to_u8(resize(astro[:400, 56:456], (96, 96), anti_aliasing=True)))

    rng = np.random.default_rng(0)
    train, test = [], []
    for label, name in enumerate(SOURCES):
        img = getattr(data, name)()[..., :3]
        scale = 128.0 / min(img.shape[:2])
        small = resize(img, (round(img.shape[0] * scale), round(img.shape[1] * scale)), anti_aliasing=True)
        for i in range(TRAIN_PER_CLASS + TEST_PER_CLASS):
            r = rng.integers(0, small.shape[0] - 32 + 1)
            c = rng.integers(0, small.shape[1] - 32 + 1)
            crop = to_u8(small[r:r + 32, c:c + 32])
            (train if i < TRAIN_PER_CLASS else test).append((label, crop))
    d = root / "patches"
    d.mkdir(exist_ok=True)
    (d / "train.bin").write_bytes(records(train))
    (d / "test.bin").write_bytes(records(test))
    (d / "metadata.json").write_text(
        json.dumps({"num_classes": len(SOURCES), "height": 32, "width": 32, "channels": 3, "classes": SOURCES}, indent=2)
        + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data")
