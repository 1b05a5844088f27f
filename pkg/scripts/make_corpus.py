"""Regenerate the bundled test corpus from scikit-image's sample data.

Each image is converted to luma, center-cropped to a square (except
``coffee``, kept at its 3:2 aspect to exercise partial edge blocks) and
resized so the long side is 256 pixels.
"""

import sys
from pathlib import Path

import numpy as np
from skimage import data, transform

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from impalloc.image import save_pgm, to_luma  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "impalloc" / "data" / "corpus"
NAMES = ["camera", "astronaut", "coffee", "coins", "rocket", "chelsea", "clock", "hubble_deep_field"]
KEEP_ASPECT = {"coffee"}


def prepare(name: str) -> np.ndarray:
    img = getattr(data, name)()
    if img.ndim == 3:
        img = to_luma(img[..., :3])
    h, w = img.shape
    if name not in KEEP_ASPECT:
        side = min(h, w)
        top, left = (h - side) // 2, (w - side) // 2
        img = img[top : top + side, left : left + side]
        h = w = side
    scale = 256 / max(h, w)
    shape = (round(h * scale), round(w * scale))
    out = transform.resize(img, shape, order=3, anti_aliasing=True, preserve_range=True)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        img = prepare(name)
        save_pgm(OUT / f"{name}.pgm", img)
        print(name, img.shape)


if __name__ == "__main__":
    main()
