"""Image decoding, resizing and tensor conversion.

Images are kept as uint8 numpy arrays of shape (H, W, C) with C in {1, 3}.
Resizing uses the pixel-center convention (source coordinate of output pixel
i is (i + 0.5) * src / dst - 0.5), which makes same-size bilinear resizing an
exact identity.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import ChannelMismatch, CorruptData, InvalidDimensions, UnsupportedFormat

SUPPORTED_FORMATS = {"PNG", "BMP", "JPEG"}

# ITU-R BT.601 luma weights
_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


class InterpMethod(enum.Enum):
    NEAREST = "nearest"
    BILINEAR = "bilinear"


@dataclass(frozen=True)
class Image:
    """Decoded raster: uint8 samples, row-major, 1 or 3 channels."""

    width: int
    height: int
    channels: int
    data: np.ndarray  # (H, W, C) uint8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidDimensions(f"{self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ChannelMismatch(f"channels must be 1 or 3, got {self.channels}")
        if self.data.shape != (self.height, self.width, self.channels):
            raise InvalidDimensions(
                f"data shape {self.data.shape} != {(self.height, self.width, self.channels)}"
            )
        if self.data.dtype != np.uint8:
            raise InvalidDimensions(f"data dtype must be uint8, got {self.data.dtype}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=np.ascontiguousarray(arr))

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and np.array_equal(self.data, other.data)
        )


def load_image(path) -> Image:
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    try:
        with PILImage.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise UnsupportedFormat(path, f"(format {fmt})")
            im.load()
            if im.mode in ("RGBA", "LA", "PA", "P"):
                im = im.convert("RGBA")
                rgba = np.asarray(im, dtype=np.float64)
                # composite over black
                rgb = rgba[:, :, :3] * (rgba[:, :, 3:4] / 255.0)
                arr = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            elif im.mode == "RGB":
                arr = np.asarray(im, dtype=np.uint8)
            elif im.mode in ("I", "I;16", "F"):
                raise UnsupportedFormat(path, f"(mode {im.mode})")
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(path, f"({exc})") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptData(path, f"({exc})") from exc
    return Image.from_array(arr)


def save_image(img: Image, path) -> None:
    arr = img.data[:, :, 0] if img.channels == 1 else img.data
    PILImage.fromarray(arr).save(path)


def _source_coords(dst: int, src: int) -> np.ndarray:
    return (np.arange(dst) + 0.5) * (src / dst) - 0.5


def resize(img: Image, w: int, h: int, method: InterpMethod = InterpMethod.BILINEAR) -> Image:
    if w < 1 or h < 1:
        raise InvalidDimensions(f"target {w}x{h}")
    if w == img.width and h == img.height and method is InterpMethod.BILINEAR:
        return img
    out = resize_array(img.data.astype(np.float64), w, h, method)
    return Image.from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_array(data: np.ndarray, w: int, h: int, method: InterpMethod) -> np.ndarray:
    """Resize a float (H, W, C) array; no rounding or clamping."""
    src_h, src_w = data.shape[:2]
    xs = _source_coords(w, src_w)
    ys = _source_coords(h, src_h)
    if method is InterpMethod.NEAREST:
        xi = np.clip(np.rint(xs).astype(np.intp), 0, src_w - 1)
        yi = np.clip(np.rint(ys).astype(np.intp), 0, src_h - 1)
        return data[yi][:, xi]
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, src_w - 1)
    x1 = np.clip(x0 + 1, 0, src_w - 1)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, src_h - 1)
    y1 = np.clip(y0 + 1, 0, src_h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
    bot = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    gray = img.data.astype(np.float64) @ _GRAY_WEIGHTS
    return Image.from_array(np.clip(np.rint(gray), 0, 255).astype(np.uint8))


def to_tensor(img: Image, mean, scale) -> np.ndarray:
    """Convert to a float32 (C, H, W) tensor: (sample - mean_c) / scale_c."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
    if mean.size != img.channels or scale.size != img.channels:
        raise ChannelMismatch(
            f"mean/scale lengths ({mean.size}/{scale.size}) != channels ({img.channels})"
        )
    if np.any(scale == 0):
        raise ChannelMismatch("scale entries must be nonzero")
    out = (img.data.astype(np.float64) - mean) / scale
    return np.ascontiguousarray(out.transpose(2, 0, 1)).astype(np.float32)
