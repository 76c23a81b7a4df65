"""Core colorimetry: sRGB transfer functions, XYZ / u'v' conversions, and the
linear Bradford chromatic adaptation transform.

All conversions are double precision and unclipped; colors are numpy arrays
with the channel dimension last, so every function broadcasts over pixels,
histogram bins, or grids. Gamut handling is deliberately left to callers.
"""

from __future__ import annotations

import numpy as np

# Linear sRGB -> CIE XYZ (D65 white), Lindbloom's 7-decimal matrix.
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# Numerical inverse rather than the published rounded one, so round trips
# close to machine precision.
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# Bradford spectrally sharpened XYZ -> LMS matrix (Lindbloom).
BRADFORD = np.array([
    [0.8951000, 0.2664000, -0.1614000],
    [-0.7502000, 1.7135000, 0.0367000],
    [0.0389000, -0.0685000, 1.0296000],
])
BRADFORD_INV = np.linalg.inv(BRADFORD)

# White point of the display color space: XYZ of linear RGB (1,1,1).
D65_XYZ = SRGB_TO_XYZ @ np.ones(3)

# One just-noticeable difference in u'v' units.
JND = 0.004


def jnd(n: float) -> float:
    """Convert a count of just-noticeable differences to u'v' distance."""
    if n < 0:
        raise ValueError("JND count must be non-negative")
    return n * JND


def srgb_decode(c8) -> np.ndarray:
    """8-bit encoded sRGB values (0..255) to linear-light values in [0, 1]."""
    c8 = np.asarray(c8, dtype=np.float64)
    if np.any(c8 < 0) or np.any(c8 > 255):
        raise ValueError("encoded sRGB channels must be in [0, 255]")
    c = c8 / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_encode(c) -> np.ndarray:
    """Linear-light values to 8-bit encoded sRGB, clipping into gamut."""
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    enc = np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)
    return np.round(enc * 255.0).astype(np.uint8)


def rgb_to_xyz(rgb) -> np.ndarray:
    """Linear sRGB to CIE XYZ; broadcasts over leading axes."""
    return np.asarray(rgb, dtype=np.float64) @ SRGB_TO_XYZ.T


def xyz_to_rgb(xyz) -> np.ndarray:
    """CIE XYZ to linear sRGB; output may lie outside [0, 1]."""
    return np.asarray(xyz, dtype=np.float64) @ XYZ_TO_SRGB.T


def xyz_to_uv(xyz) -> np.ndarray:
    """CIE XYZ to CIE 1976 u'v' chromaticity."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    d = x + 15.0 * y + 3.0 * z
    if np.any(d <= 0):
        raise ValueError("degenerate color: X + 15Y + 3Z must be positive")
    return np.stack([4.0 * x / d, 9.0 * y / d], axis=-1)


def uv_to_xyz(uv, y=1.0) -> np.ndarray:
    """CIE 1976 u'v' chromaticity plus luminance Y back to XYZ."""
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    if np.any(v <= 0):
        raise ValueError("degenerate chromaticity: v' must be positive")
    y = np.asarray(y, dtype=np.float64)
    x = y * 9.0 * u / (4.0 * v)
    z = y * (12.0 - 3.0 * u - 20.0 * v) / (4.0 * v)
    return np.stack([x, np.broadcast_to(y, x.shape).copy(), z], axis=-1)


# Chromaticity of the display white; origin of every trajectory.
D65_UV = xyz_to_uv(D65_XYZ)


def bradford_cat(src_white_xyz, dst_white_xyz) -> np.ndarray:
    """3x3 matrix adapting linear sRGB colors from one white point to another.

    Both whites are XYZ. The matrix maps the source white's RGB exactly onto
    the destination white's RGB; composing the forward and reverse transforms
    gives the identity.
    """
    lms_src = BRADFORD @ np.asarray(src_white_xyz, dtype=np.float64)
    lms_dst = BRADFORD @ np.asarray(dst_white_xyz, dtype=np.float64)
    if np.any(lms_src <= 0) or np.any(lms_dst <= 0):
        raise ValueError("white point has non-positive Bradford LMS component")
    scale = np.diag(lms_dst / lms_src)
    return XYZ_TO_SRGB @ BRADFORD_INV @ scale @ BRADFORD @ SRGB_TO_XYZ


def apply_cat(rgb, m: np.ndarray) -> np.ndarray:
    """Apply an adaptation matrix to linear sRGB colors, unclipped."""
    return np.asarray(rgb, dtype=np.float64) @ np.asarray(m).T


def cat_between_uv(src_uv, dst_uv, luminance: float | None = None) -> np.ndarray:
    """Adaptation matrix between two equiluminant chromaticities."""
    y = D65_XYZ[1] if luminance is None else luminance
    return bradford_cat(uv_to_xyz(src_uv, y), uv_to_xyz(dst_uv, y))


def cat_from_d65(dst_uv) -> np.ndarray:
    """Adaptation matrix from the display white to a target chromaticity.

    The source white is exactly the XYZ of linear RGB (1,1,1) and the target
    is equiluminant with it, so (1,1,1) maps onto the target's white RGB.
    """
    return bradford_cat(D65_XYZ, uv_to_xyz(dst_uv, D65_XYZ[1]))
