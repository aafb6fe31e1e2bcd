"""Regenerate the 64x64 natural-image fixtures from scikit-image sample data.

Run once; the PNGs are committed so the test suite does not need scikit-image.
"""

from pathlib import Path

import numpy as np
from skimage import data
from skimage.transform import resize

HERE = Path(__file__).parent
SOURCES = {
    "chelsea": data.chelsea,
    "coffee": data.coffee,
    "astronaut": data.astronaut,
    "rocket": data.rocket,
    "camera": data.camera,
    "hubble": data.hubble_deep_field,
}


def main():
    from mxdog_transfer.tensor_io import save_image

    for name, load in SOURCES.items():
        img = load().astype(np.float64) / 255.0
        h, w = img.shape[:2]
        side = min(h, w)
        top, left = (h - side) // 2, (w - side) // 2
        crop = img[top:top + side, left:left + side]
        small = resize(crop, (64, 64), anti_aliasing=True)
        save_image(small, HERE / f"{name}.png")


if __name__ == "__main__":
    main()
