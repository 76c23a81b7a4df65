"""Display power estimation for colors and illuminants.

Emissive-display power is an affine function of linear channel drive. To rate
an illuminant, every color of a scene histogram is adapted from the display
white to that illuminant, clipped into gamut, and its power accumulated under
the histogram weights. Sweeping illuminants over a chromaticity grid yields
the relative power landscape and its break-even boundary.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .colorimetry import (
    BRADFORD,
    D65_UV,
    apply_cat,
    cat_from_d65,
    srgb_decode,
    uv_to_xyz,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class DisplayPowerParams:
    """Per-channel unit power (power per unit linear drive) plus static draw.

    Defaults encode a panel whose blue subpixel draws twice the power of red
    and green, in arbitrary units; real deployments should regress these from
    measurements and load them from JSON.
    """

    p_disp: tuple[float, float, float] = (1.0, 1.0, 2.0)
    p_static: float = 0.0

    def __post_init__(self):
        if len(self.p_disp) != 3 or any(p <= 0 for p in self.p_disp):
            raise ValueError("per-channel powers must be three positive values")

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.p_disp, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps({"p_disp": list(self.p_disp), "p_static": self.p_static})

    @classmethod
    def from_json(cls, text: str) -> "DisplayPowerParams":
        doc = json.loads(text)
        return cls(tuple(doc["p_disp"]), doc.get("p_static", 0.0))


DEFAULT_POWER_PARAMS = DisplayPowerParams()


def pixel_power(c, params: DisplayPowerParams):
    """Power of displaying linear RGB color(s): p_disp . c + p_static."""
    c = np.asarray(c, dtype=np.float64)
    return c @ params.vector + params.p_static


# ---------------------------------------------------------------------------
# Scene color histograms
# ---------------------------------------------------------------------------

@dataclass
class ColorHistogram:
    """Normalized color density over quantized linear-sRGB bins.

    Stored sparsely: ``flat_bins`` are the occupied flat bin indices
    (r*b^2 + g*b + b-index ordering) and ``weights`` their densities.
    """

    bins_per_channel: int
    flat_bins: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.flat_bins = np.asarray(self.flat_bins, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0):
            raise ValueError("histogram weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("histogram weights must sum to 1")

    def bin_triplets(self) -> np.ndarray:
        b = self.bins_per_channel
        r, rem = np.divmod(self.flat_bins, b * b)
        g, bl = np.divmod(rem, b)
        return np.stack([r, g, bl], axis=-1)

    def bin_centers_linear(self) -> np.ndarray:
        """Linear RGB of each occupied bin's center (exact 8-bit codes when
        bins_per_channel is 256)."""
        b = self.bins_per_channel
        enc = (self.bin_triplets() + 0.5) * (256.0 / b) - 0.5
        return srgb_decode(np.clip(enc, 0.0, 255.0))

    def save(self, path) -> None:
        path = Path(path)
        trip = self.bin_triplets()
        with open(path, "w") as f:
            f.write("# chromashift color histogram v1\n")
            f.write(f"bins_per_channel,{self.bins_per_channel}\n")
            f.write("bin_r,bin_g,bin_b,weight\n")
            for (r, g, bl), w in zip(trip, self.weights):
                f.write(f"{r},{g},{bl},{w!r}\n")

    @classmethod
    def load(cls, path) -> "ColorHistogram":
        path = Path(path)
        with open(path) as f:
            header = f.readline()
            if "histogram v1" not in header:
                raise ValueError(f"{path} is not a v1 histogram file")
            key, val = f.readline().strip().split(",")
            if key != "bins_per_channel":
                raise ValueError("missing bins_per_channel header")
            bins = int(val)
            f.readline()  # column names
            rows = np.loadtxt(f, delimiter=",", ndmin=2)
        trip = rows[:, :3].astype(np.int64)
        flat = (trip[:, 0] * bins + trip[:, 1]) * bins + trip[:, 2]
        return cls(bins, flat, rows[:, 3])


def histogram_from_images(arrays, bins: int = 64) -> ColorHistogram:
    """Histogram over already-loaded uint8 (H, W, 3) arrays."""
    if not 16 <= bins <= 256:
        raise ValueError("bins_per_channel must be in 16..256")
    counts = np.zeros(bins ** 3, dtype=np.float64)
    total = 0
    for arr in arrays:
        q = (arr.reshape(-1, 3).astype(np.int64) * bins) >> 8
        flat = (q[:, 0] * bins + q[:, 1]) * bins + q[:, 2]
        counts += np.bincount(flat, minlength=bins ** 3)
        total += flat.size
    if total == 0:
        raise ValueError("no pixels to histogram")
    occupied = np.nonzero(counts)[0]
    return ColorHistogram(bins, occupied, counts[occupied] / total)


def build_histogram(corpus_dir, bins: int = 64) -> ColorHistogram:
    """Histogram of a directory of images, deterministic for a given listing.

    Unreadable files are skipped with a warning; an empty corpus is an error.
    """
    corpus_dir = Path(corpus_dir)
    paths = sorted(p for p in corpus_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)

    def load_all():
        n_ok = 0
        for p in paths:
            try:
                with Image.open(p) as im:
                    yield np.asarray(im.convert("RGB"))
                n_ok += 1
            except Exception as exc:
                logger.warning("skipping unreadable image %s: %s", p, exc)
        if n_ok == 0:
            raise ValueError(f"no readable images in {corpus_dir}")

    return histogram_from_images(load_all(), bins)


# ---------------------------------------------------------------------------
# Illuminant power and the landscape sweep
# ---------------------------------------------------------------------------

def illuminant_power(t_uv, hist: ColorHistogram, params: DisplayPowerParams) -> float:
    """Average display power under illuminant ``t_uv``, assuming complete
    adaptation: histogram colors are adapted from the display white to the
    illuminant, clamped per-channel into gamut, and weighted by density."""
    m = cat_from_d65(np.asarray(t_uv, dtype=np.float64))
    adapted = np.clip(apply_cat(hist.bin_centers_linear(), m), 0.0, 1.0)
    return float(hist.weights @ (adapted @ params.vector) + params.p_static)


def _snapped_centers(lo: float, hi: float, n: int, anchor: float) -> np.ndarray:
    """Cell centers over [lo, hi], shifted (< half a cell) so that the center
    nearest ``anchor`` lands on it exactly."""
    step = (hi - lo) / n
    raw = lo + (np.arange(n) + 0.5) * step
    k = int(np.argmin(np.abs(raw - anchor)))
    return anchor + (np.arange(n) - k) * step


@dataclass
class PowerLandscape:
    """Grid of display power relative to the white point over u'v'."""

    u_axis: np.ndarray            # (nu,) cell-center u'
    v_axis: np.ndarray            # (nv,) cell-center v'
    relative: np.ndarray          # (nv, nu), NaN where invalid
    valid: np.ndarray             # (nv, nu) bool
    params: DisplayPowerParams = field(default_factory=DisplayPowerParams)

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("# chromashift power landscape v1\n")
            f.write("u,v,relative_power,valid\n")
            for iv, v in enumerate(self.v_axis):
                for iu, u in enumerate(self.u_axis):
                    r = self.relative[iv, iu]
                    f.write(f"{u!r},{v!r},{r!r},{int(self.valid[iv, iu])}\n")

    def save_image(self, path) -> None:
        """8-bit gray export, one byte per cell of relative power clipped at
        1.0; rows run top-to-bottom from high to low v'. Invalid cells are 0."""
        clipped = np.where(self.valid, np.clip(self.relative, 0.0, 1.0), 0.0)
        img = np.round(clipped[::-1, :] * 255.0).astype(np.uint8)
        Image.fromarray(img, mode="L").save(path)


def illuminant_validity(uv) -> np.ndarray:
    """True where a chromaticity is representable as an equiluminant white:
    non-negative XYZ and strictly positive Bradford cone response. The
    default landscape bounds stay well inside the spectral locus; this mask
    guards the degenerate edges."""
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    ok = (v > 1e-9) & (u > 0.0) & (12.0 - 3.0 * u - 20.0 * v >= 0.0)
    xyz = np.zeros(uv.shape[:-1] + (3,))
    safe_v = np.where(ok, v, 1.0)
    xyz[..., 0] = 9.0 * u / (4.0 * safe_v)
    xyz[..., 1] = 1.0
    xyz[..., 2] = (12.0 - 3.0 * u - 20.0 * safe_v) / (4.0 * safe_v)
    lms = xyz @ BRADFORD.T
    return ok & np.all(lms > 0.0, axis=-1)


DEFAULT_LANDSCAPE_BOUNDS = ((0.12, 0.30), (0.40, 0.56))


def power_landscape(hist: ColorHistogram, params: DisplayPowerParams,
                    bounds=DEFAULT_LANDSCAPE_BOUNDS, resolution: int = 256,
                    threads: int = 1) -> PowerLandscape:
    """Sweep equiluminant illuminants over a u'v' grid and rate each cell's
    power relative to the display white.

    The grid is snapped so one cell center is exactly the white point, making
    that cell's relative power exactly 1. Cells are independent; with
    ``threads`` > 1 rows are computed concurrently with identical results.
    """
    (u_lo, u_hi), (v_lo, v_hi) = bounds
    u_axis = _snapped_centers(u_lo, u_hi, resolution, D65_UV[0])
    v_axis = _snapped_centers(v_lo, v_hi, resolution, D65_UV[1])
    grid = np.stack(np.meshgrid(u_axis, v_axis, indexing="xy"), axis=-1)
    valid = illuminant_validity(grid)
    p_d65 = illuminant_power(D65_UV, hist, params)

    def row(iv: int) -> np.ndarray:
        vals = np.full(len(u_axis), np.nan)
        for iu in range(len(u_axis)):
            if valid[iv, iu]:
                vals[iu] = illuminant_power(grid[iv, iu], hist, params) / p_d65
        return vals

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, range(len(v_axis))))
    else:
        rows = [row(iv) for iv in range(len(v_axis))]
    return PowerLandscape(u_axis, v_axis, np.array(rows), valid, params)


def savings_boundary(landscape: PowerLandscape) -> list[np.ndarray]:
    """Iso-contours of the landscape at relative power 1.0, as ordered (n, 2)
    u'v' polylines (marching squares). Empty when the landscape never crosses
    break-even."""
    from skimage import measure

    field_vals = np.where(landscape.valid, landscape.relative, np.nan)
    finite = field_vals[np.isfinite(field_vals)]
    if finite.size == 0 or finite.min() >= 1.0 or finite.max() <= 1.0:
        return []
    contours = measure.find_contours(field_vals, 1.0)
    out = []
    for c in contours:
        # rows index v, columns index u; fractional indices -> coordinates
        v = np.interp(c[:, 0], np.arange(len(landscape.v_axis)), landscape.v_axis)
        u = np.interp(c[:, 1], np.arange(len(landscape.u_axis)), landscape.u_axis)
        out.append(np.stack([u, v], axis=-1))
    return out
