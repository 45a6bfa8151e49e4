"""Stochastic augmentation pipeline.

Each of eight transforms is applied (or not) with a 50% chance, in a fixed
canonical order: flip_h, trim, blur, noise, brightness, contrast, rotate,
scale.  All randomness for one dataset item is derived from
(master_seed, item_index) via a splitmix64 hash feeding a PCG64 stream, so
the augmented dataset is a pure function of the manifest and the config
regardless of worker scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch
from .imagecore import Image, InterpMethod, load_image, resize, resize_array, save_image

CANONICAL_ORDER = (
    "flip_h", "trim", "blur", "noise", "brightness", "contrast", "rotate", "scale",
)

CHANNEL_SELECTORS = ("all", "r", "g", "b")

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def item_stream_seed(master_seed: int, item_index: int) -> int:
    return splitmix64(splitmix64(master_seed & _MASK64) ^ (item_index & _MASK64))


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in CANONICAL_ORDER:
            raise ValueError(f"unknown transform kind {self.kind!r}")


@dataclass(frozen=True)
class AugmentPlan:
    transforms: tuple  # TransformSpec, canonical order, each kind at most once
    master_seed: int
    item_index: int


@dataclass(frozen=True)
class AugmentConfig:
    factor: int
    master_seed: int
    output_size: tuple | None = None

    def __post_init__(self):
        if self.factor < 0:
            raise ValueError("factor must be nonnegative")


def sample_plan(master_seed: int, item_index: int) -> AugmentPlan:
    rng = np.random.Generator(np.random.PCG64(item_stream_seed(master_seed, item_index)))
    chosen = []
    for kind in CANONICAL_ORDER:
        include = rng.random() < 0.5
        # parameters are always drawn so inclusion flags don't shift later draws
        if kind == "flip_h":
            params = {}
        elif kind == "trim":
            params = {"fractions": tuple(rng.uniform(0.0, 0.10, size=4))}
        elif kind == "blur":
            params = {"sigma": rng.uniform(0.0, 3.0)}
        elif kind == "noise":
            params = {"scale": rng.uniform(0.0, 0.2),
                      "seed": int(rng.integers(0, 1 << 63))}
        elif kind == "brightness":
            params = {"delta": 10.0 if rng.random() < 0.5 else -10.0,
                      "channel": CHANNEL_SELECTORS[rng.integers(0, 4)]}
        elif kind == "contrast":
            params = {"factor": rng.uniform(0.5, 1.5),
                      "channel": CHANNEL_SELECTORS[rng.integers(0, 4)]}
        elif kind == "rotate":
            params = {"degrees": rng.uniform(-45.0, 45.0)}
        else:  # scale
            params = {"factor": rng.uniform(0.8, 1.2)}
        if include:
            chosen.append(TransformSpec(kind, params))
    return AugmentPlan(tuple(chosen), master_seed, item_index)


def _select_channels(img: Image, selector: str) -> list:
    if selector == "all":
        return list(range(img.channels))
    if img.channels != 3:
        raise ChannelMismatch(
            f"channel selector {selector!r} needs a 3-channel image, got {img.channels}"
        )
    return ["rgb".index(selector)]


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur(data: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return data
    k = _gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    out = data.astype(np.float64)
    # separable convolution with edge-replicate padding
    padded = np.pad(out, ((r, r), (0, 0), (0, 0)), mode="edge")
    out = sum(k[i] * padded[i:i + out.shape[0]] for i in range(len(k)))
    padded = np.pad(out, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = sum(k[i] * padded[:, i:i + data.shape[1]] for i in range(len(k)))
    return out


def _rotate(data: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return data
    h, w = data.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse mapping: rotate destination coords back into the source
    sx = cos_t * xx + sin_t * yy + cx
    sy = -sin_t * xx + cos_t * yy + cy
    return _bilinear_sample(data, sx, sy)


def _bilinear_sample(data: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) float data at fractional coords; out of range is black."""
    h, w = data.shape[:2]
    valid = (sx >= -0.5) & (sx <= w - 0.5) & (sy >= -0.5) & (sy <= h - 0.5)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = (sx - x0)[:, :, None]
    fy = (sy - y0)[:, :, None]

    def fetch(yi, xi):
        inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h))[:, :, None]
        vals = data[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside, vals, 0.0)

    out = (fetch(y0, x0) * (1 - fx) * (1 - fy)
           + fetch(y0, x0 + 1) * fx * (1 - fy)
           + fetch(y0 + 1, x0) * (1 - fx) * fy
           + fetch(y0 + 1, x0 + 1) * fx * fy)
    return np.where(valid[:, :, None], out, 0.0)


def _scale(data: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return data
    h, w = data.shape[:2]
    new_w = max(1, int(round(w * factor)))
    new_h = max(1, int(round(h * factor)))
    scaled = resize_array(data.astype(np.float64), new_w, new_h, InterpMethod.BILINEAR)
    out = np.zeros((h, w, data.shape[2]), dtype=np.float64)
    # center crop or center pad back to the original dimensions
    sy = max(0, (new_h - h) // 2)
    sx = max(0, (new_w - w) // 2)
    dy = max(0, (h - new_h) // 2)
    dx = max(0, (w - new_w) // 2)
    ch = min(h, new_h)
    cw = min(w, new_w)
    out[dy:dy + ch, dx:dx + cw] = scaled[sy:sy + ch, sx:sx + cw]
    return out


def apply_transform(img: Image, t: TransformSpec) -> Image:
    data = img.data
    if t.kind == "flip_h":
        return Image.from_array(data[:, ::-1])
    if t.kind == "trim":
        fl, fr, ft, fb = t.params["fractions"]
        w, h = img.width, img.height
        x0 = int(round(fl * w))
        x1 = w - int(round(fr * w))
        y0 = int(round(ft * h))
        y1 = h - int(round(fb * h))
        x1 = max(x1, x0 + 1)
        y1 = max(y1, y0 + 1)
        if (x0, y0, x1, y1) == (0, 0, w, h):
            return img
        cropped = Image.from_array(data[y0:y1, x0:x1])
        return resize(cropped, w, h, InterpMethod.BILINEAR)
    if t.kind == "blur":
        out = _blur(data, t.params["sigma"])
        if out is data:
            return img
    elif t.kind == "noise":
        scale = t.params["scale"]
        if scale == 0.0:
            return img
        rng = np.random.Generator(np.random.PCG64(t.params["seed"]))
        out = data.astype(np.float64) + rng.normal(0.0, scale * 255.0, size=data.shape)
    elif t.kind == "brightness":
        idx = _select_channels(img, t.params["channel"])
        out = data.astype(np.float64)
        out[:, :, idx] += t.params["delta"]
    elif t.kind == "contrast":
        idx = _select_channels(img, t.params["channel"])
        out = data.astype(np.float64)
        out[:, :, idx] = 128.0 + t.params["factor"] * (out[:, :, idx] - 128.0)
    elif t.kind == "rotate":
        out = _rotate(data, t.params["degrees"])
        if out is data:
            return img
    elif t.kind == "scale":
        out = _scale(data, t.params["factor"])
        if out is data:
            return img
    else:
        raise ValueError(t.kind)
    return Image.from_array(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def apply_plan(img: Image, plan: AugmentPlan) -> Image:
    out = img
    for t in plan.transforms:
        out = apply_transform(out, t)
    return out


def augment_dataset(manifest, cfg: AugmentConfig, out_dir):
    """Write `cfg.factor` augmented variants per original entry as PNG.

    Returns a new manifest containing all originals plus the augmented
    entries (train-side only by construction: callers pass train manifests).
    """
    from .errors import EmptyManifest
    from .evalproto import DatasetManifest, ManifestEntry

    if not manifest.entries:
        raise EmptyManifest("augment_dataset needs at least one training image")
    if cfg.factor == 0:
        return manifest

    os.makedirs(out_dir, exist_ok=True)
    jobs = []
    for i, entry in enumerate(manifest.entries):
        for v in range(cfg.factor):
            jobs.append((i, v, entry))

    def run_one(job):
        i, v, entry = job
        item_index = i * cfg.factor + v
        plan = sample_plan(cfg.master_seed, item_index)
        img = load_image(entry.path)
        out = apply_plan(img, plan)
        if cfg.output_size is not None:
            out = resize(out, cfg.output_size[0], cfg.output_size[1])
        stem = os.path.splitext(os.path.basename(entry.path))[0]
        path = os.path.join(out_dir, f"{entry.subject}__{stem}__aug{v:04d}.png")
        save_image(out, path)
        return ManifestEntry(
            path=path,
            subject=entry.subject,
            origin="augmented",
            source=entry.path,
            master_seed=cfg.master_seed,
            item_index=item_index,
        )

    workers = int(os.environ.get("EARBENCH_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            augmented = list(pool.map(run_one, jobs))
    else:
        augmented = [run_one(j) for j in jobs]

    return DatasetManifest(entries=list(manifest.entries) + augmented)
