"""Local-descriptor baselines: uniform LBP and HOG with grid histograms,
plus nearest-neighbor closed-set identification."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import LayoutMismatch, NotGrayscale, TooSmall
from .imagecore import Image

LBP_BINS = 59  # 58 uniform 8-bit patterns + 1 catch-all

_FEATURE_MAGIC = b"EBFV"
_FEATURE_VERSION = 1
_DESCRIPTOR_IDS = {"lbp": 0, "hog": 1}
_DESCRIPTOR_NAMES = {v: k for k, v in _DESCRIPTOR_IDS.items()}


def _uniform_lbp_table() -> np.ndarray:
    """Map each 8-bit LBP code to a bin: uniform patterns get 0..57, the
    rest share bin 58.  A pattern is uniform when its circular bit string
    has at most 2 transitions."""
    table = np.full(256, 58, dtype=np.intp)
    next_bin = 0
    for code in range(256):
        bits = [(code >> i) & 1 for i in range(8)]
        transitions = sum(bits[i] != bits[(i + 1) % 8] for i in range(8))
        if transitions <= 2:
            table[code] = next_bin
            next_bin += 1
    assert next_bin == 58
    return table


_LBP_TABLE = _uniform_lbp_table()

# 8-neighborhood offsets (dy, dx), LSB first, clockwise from the east neighbor
_LBP_OFFSETS = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    descriptor_id: str  # "lbp" | "hog"
    layout: tuple  # (rows, cols, bins)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        r, c, b = self.layout
        if v.size != r * c * b:
            raise LayoutMismatch(f"length {v.size} != {r}x{c}x{b}")


@dataclass(frozen=True)
class Gallery:
    entries: list  # (FeatureVector, subject_label)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("gallery must be nonempty")
        fv0 = self.entries[0][0]
        for fv, _ in self.entries:
            if fv.descriptor_id != fv0.descriptor_id or fv.layout != fv0.layout:
                raise LayoutMismatch("gallery entries disagree on descriptor/layout")

    @property
    def subjects(self) -> list:
        return sorted({label for _, label in self.entries})


def _require_gray(img: Image):
    if img.channels != 1:
        raise NotGrayscale(f"expected single-channel image, got {img.channels}")


def lbp_codes(img: Image) -> np.ndarray:
    """Uniform LBP bin index per interior pixel, shape (H-2, W-2)."""
    _require_gray(img)
    if img.height < 3 or img.width < 3:
        raise TooSmall(f"{img.width}x{img.height} < 3x3")
    g = img.data[:, :, 0].astype(np.int16)
    center = g[1:-1, 1:-1]
    codes = np.zeros_like(center, dtype=np.intp)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        neigh = g[1 + dy:g.shape[0] - 1 + dy, 1 + dx:g.shape[1] - 1 + dx]
        codes |= (neigh > center).astype(np.intp) << bit
    return _LBP_TABLE[codes]


def lbp_descriptor(img: Image, grid=(4, 4)) -> FeatureVector:
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise TooSmall("grid must be at least 1x1")
    bins = lbp_codes(img)
    h, w = bins.shape
    hists = []
    row_edges = np.linspace(0, h, rows + 1).astype(int)
    col_edges = np.linspace(0, w, cols + 1).astype(int)
    for r in range(rows):
        for c in range(cols):
            cell = bins[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]]
            hist = np.bincount(cell.ravel(), minlength=LBP_BINS).astype(np.float64)
            total = hist.sum()
            if total > 0:
                hist /= total
            hists.append(hist)
    return FeatureVector(np.concatenate(hists), "lbp", (rows, cols, LBP_BINS))


def hog_descriptor(img: Image, cell: int = 8, block: int = 2, bins: int = 9) -> FeatureVector:
    """HOG with centered-difference gradients, unsigned orientations and
    L2 block normalization with clipping at 0.2."""
    _require_gray(img)
    if bins < 2:
        raise TooSmall("bins must be >= 2")
    g = img.data[:, :, 0].astype(np.float64)
    h, w = g.shape
    n_cy, n_cx = h // cell, w // cell
    if n_cy < block or n_cx < block:
        raise TooSmall(f"{w}x{h} too small for cell {cell}, block {block}")

    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    mag = np.hypot(gx, gy)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0

    # linear interpolation between the two nearest orientation bin centers
    # (centers at b * bin_width, circular over the unsigned range)
    bin_width = 180.0 / bins
    pos = ang / bin_width
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    lo_bin = lo % bins
    hi_bin = (lo + 1) % bins

    cell_hist = np.zeros((n_cy, n_cx, bins), dtype=np.float64)
    cy = np.minimum(np.arange(h) // cell, n_cy - 1)
    cx = np.minimum(np.arange(w) // cell, n_cx - 1)
    valid_h, valid_w = n_cy * cell, n_cx * cell
    for b in range(bins):
        wl = np.where(lo_bin == b, mag * (1 - frac), 0.0)
        wh = np.where(hi_bin == b, mag * frac, 0.0)
        contrib = (wl + wh)[:valid_h, :valid_w]
        cell_hist[:, :, b] = contrib.reshape(n_cy, cell, n_cx, cell).sum(axis=(1, 3))

    n_by, n_bx = n_cy - block + 1, n_cx - block + 1
    eps = 1e-5
    out = []
    for by in range(n_by):
        for bx in range(n_bx):
            v = cell_hist[by:by + block, bx:bx + block].ravel()
            v = v / np.sqrt(np.sum(v * v) + eps * eps)
            v = np.minimum(v, 0.2)
            norm = np.sqrt(np.sum(v * v) + eps * eps)
            out.append(v / norm)
    return FeatureVector(np.concatenate(out), "hog", (n_by, n_bx, block * block * bins))


def feature_distance(a: FeatureVector, b: FeatureVector, metric: str) -> float:
    if a.descriptor_id != b.descriptor_id or a.values.size != b.values.size:
        raise LayoutMismatch("feature vectors are not comparable")
    x = a.values.astype(np.float64)
    y = b.values.astype(np.float64)
    if metric == "chi2":
        return float(np.sum((x - y) ** 2 / (x + y + 1e-10)))
    if metric == "cosine":
        nx = np.linalg.norm(x)
        ny = np.linalg.norm(y)
        if nx == 0.0 or ny == 0.0:
            return 0.0 if nx == ny else 1.0
        return float(1.0 - np.dot(x, y) / (nx * ny))
    if metric == "euclidean":
        return float(np.linalg.norm(x - y))
    raise ValueError(f"unknown metric {metric!r}")


def subject_scores(gallery: Gallery, probe: FeatureVector, metric: str,
                   subjects=None) -> np.ndarray:
    """Per-subject minimum distance to the probe, ordered by `subjects`
    (default: the gallery's sorted subject list)."""
    subjects = list(subjects) if subjects is not None else gallery.subjects
    best = {s: np.inf for s in subjects}
    for fv, label in gallery.entries:
        d = feature_distance(fv, probe, metric)
        if d < best[label]:
            best[label] = d
    return np.array([best[s] for s in subjects], dtype=np.float64)


def nn_identify(gallery: Gallery, probe: FeatureVector, metric: str) -> list:
    """Subjects ranked ascending by best distance; ties by label."""
    scores = subject_scores(gallery, probe, metric)
    subjects = gallery.subjects
    order = sorted(range(len(subjects)), key=lambda i: (scores[i], subjects[i]))
    return [(subjects[i], float(scores[i])) for i in order]


def save_features(fv: FeatureVector, path) -> None:
    r, c, b = fv.layout
    payload = fv.values.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_FEATURE_MAGIC)
        f.write(struct.pack("<HB3I", _FEATURE_VERSION, _DESCRIPTOR_IDS[fv.descriptor_id],
                            r, c, b))
        f.write(payload)


def load_features(path) -> FeatureVector:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _FEATURE_MAGIC:
        raise LayoutMismatch(f"bad feature file magic in {path}")
    version, did, r, c, b = struct.unpack_from("<HB3I", blob, 4)
    if version != _FEATURE_VERSION or did not in _DESCRIPTOR_NAMES:
        raise LayoutMismatch(f"unsupported feature file version/id in {path}")
    values = np.frombuffer(blob, dtype="<f4", offset=4 + struct.calcsize("<HB3I"))
    return FeatureVector(values.copy(), _DESCRIPTOR_NAMES[did], (r, c, b))
