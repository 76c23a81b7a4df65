"""Procedural stand-in for a natural-scene corpus.

Real deployments should histogram a large photo collection; for tests, demos,
and offline experiments this synthesizes small outdoor/indoor/urban scenes
with natural-ish color statistics (blue skies, green-brown ground, mostly
desaturated mid-tones).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _vertical_blend(h: int, w: int, top, bottom) -> np.ndarray:
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    return (1 - t) * np.asarray(top, float) + t * np.asarray(bottom, float) + np.zeros((h, w, 3))


def _scene(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    # Skies fill a large solid angle in panoramic viewing, so the outdoor and
    # urban scenes keep generous sky fractions.
    if kind == "outdoor":
        horizon = int(h * rng.uniform(0.45, 0.65))
        sky = _vertical_blend(horizon, w, (100, 140, 215), (185, 200, 230))
        green = np.array([90, 110, 60]) + rng.uniform(-25, 25, 3)
        brown = np.array([120, 100, 80]) + rng.uniform(-20, 20, 3)
        ground = _vertical_blend(h - horizon, w, green, brown)
        img = np.concatenate([sky, ground], axis=0)
    elif kind == "indoor":
        wall = np.array([175, 170, 160]) + rng.uniform(-30, 30, 3)
        img = _vertical_blend(h, w, wall + 20, wall - 25)
        # warm lamp pool
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        yy, xx = np.mgrid[0:h, 0:w]
        glow = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (0.08 * h * w))
        img += glow[..., None] * np.array([60, 40, -10])
    elif kind == "urban":
        strip = int(h * rng.uniform(0.45, 0.65))
        sky = _vertical_blend(strip, w, (100, 140, 215), (195, 205, 228))
        tone = rng.uniform(90, 170)
        walls = np.full((h - strip, w, 3), tone) + rng.uniform(-12, 12, (1, w, 3))
        img = np.concatenate([sky, walls], axis=0)
    else:  # smooth desaturated field
        base = rng.uniform(90, 190, 3)
        yy, xx = np.mgrid[0:h, 0:w]
        phase = rng.uniform(0, 2 * np.pi, 3)
        freq = rng.uniform(0.5, 2.0, 3)
        wave = np.sin(2 * np.pi * freq * (yy + xx)[..., None] / (h + w) + phase)
        img = base + 28.0 * wave
    img = img + rng.normal(0.0, 7.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_demo_corpus(out_dir, n: int = 120, size: tuple[int, int] = (48, 48),
                         seed: int = 0) -> list[Path]:
    """Write ``n`` synthetic scene images to ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = ["outdoor", "indoor", "urban", "field"]
    h, w = size
    paths = []
    for i in range(n):
        rng = np.random.default_rng(seed * 100003 + i)
        img = _scene(kinds[i % len(kinds)], h, w, rng)
        p = out_dir / f"scene_{i:04d}.png"
        Image.fromarray(img).save(p)
        paths.append(p)
    return paths
