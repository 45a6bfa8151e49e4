import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from earbench.imagecore import Image, save_image  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_rgb(rng):
    return Image.from_array(rng.integers(0, 256, (24, 32, 3)).astype(np.uint8))


@pytest.fixture
def random_gray(rng):
    return Image.from_array(rng.integers(0, 256, (24, 32, 1)).astype(np.uint8))


def write_toy_dataset(root, classes=2, per_class=8, size=32, seed=0):
    """Solid-color classes with slight per-pixel jitter; linearly separable."""
    rng = np.random.default_rng(seed)
    colors = rng.integers(40, 216, (classes, 3))
    entries = []
    for c in range(classes):
        sdir = os.path.join(root, f"c{c:02d}")
        os.makedirs(sdir, exist_ok=True)
        for i in range(per_class):
            arr = np.clip(colors[c] + rng.integers(-8, 9, (size, size, 3)), 0, 255)
            path = os.path.join(sdir, f"img{i:02d}.png")
            save_image(Image.from_array(arr.astype(np.uint8)), path)
            entries.append((path, f"c{c:02d}"))
    return entries
