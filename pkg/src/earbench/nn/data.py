"""Batch assembly from manifest entries: decode, resize, normalize."""

from __future__ import annotations

import numpy as np

from ..imagecore import InterpMethod, load_image, resize

# resized uint8 tensors keyed by (path, shape); cleared via clear_cache()
_CACHE: dict = {}
_CACHE_LIMIT = 30000


def clear_cache() -> None:
    _CACHE.clear()


def entry_tensor_u8(path: str, input_shape) -> np.ndarray:
    """uint8 (C, H, W) tensor for one image file."""
    c, h, w = input_shape
    key = (path, (c, h, w))
    cached = _CACHE.get(key)
    if cached is not None:
        return cached
    img = load_image(path)
    img = resize(img, w, h, InterpMethod.BILINEAR)
    arr = img.data
    if c == 3 and img.channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif c == 1 and img.channels == 3:
        from ..imagecore import to_grayscale
        arr = to_grayscale(img).data
    tensor = np.ascontiguousarray(arr.transpose(2, 0, 1))
    if len(_CACHE) < _CACHE_LIMIT:
        _CACHE[key] = tensor
    return tensor


def load_batch_tensor(entries, input_shape, dtype=np.float32) -> np.ndarray:
    """Stack entries into a normalized (N, C, H, W) batch in [-1, 1]."""
    batch = np.stack([entry_tensor_u8(e.path, input_shape) for e in entries])
    return ((batch.astype(np.float64) - 127.5) / 127.5).astype(dtype)
