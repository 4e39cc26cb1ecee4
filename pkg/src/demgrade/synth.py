"""Seeded four-class geometric mini-dataset used for CI and smoke runs.

Each class gets one bright motif on a dark, noisy background:

* MildDemented      - filled disc
* ModerateDemented  - three horizontal bars
* NonDemented       - hollow square ring
* VeryMildDemented  - plus-shaped cross
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import CLASS_NAMES, encode_png


def _motif(label, size, rng):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    cy = size / 2 + rng.uniform(-size / 32, size / 32)
    cx = size / 2 + rng.uniform(-size / 32, size / 32)
    r = size * rng.uniform(0.28, 0.33)
    dy, dx = yy - cy, xx - cx
    if label == 0:
        return dy * dy + dx * dx <= r * r
    if label == 1:
        bar = size * 0.17
        rows = np.zeros_like(yy, dtype=bool)
        for k in (-1, 0, 1):
            rows |= np.abs(dy - k * 1.6 * bar) <= bar / 2
        return rows & (np.abs(dx) <= r)
    if label == 2:
        outer = np.maximum(np.abs(dy), np.abs(dx)) <= r
        inner = np.maximum(np.abs(dy), np.abs(dx)) <= r * 0.45
        return outer & ~inner
    arm = size * 0.1
    return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))


def synth_image(label, rng, size=128):
    fg = _motif(label, size, rng)
    bg_level = rng.uniform(20, 40)
    fg_level = rng.uniform(170, 230)
    img = np.where(fg, fg_level, bg_level) + rng.normal(0.0, 8.0, (size, size))
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def synthesize_dataset(out_dir, per_class=20, size=128, seed=0):
    """Write ``per_class`` PNGs per class under ``out_dir/<ClassName>/``."""
    root = Path(out_dir)
    for label, name in enumerate(CLASS_NAMES):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), label])))
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            (class_dir / f"{name.lower()}_{i:03d}.png").write_bytes(encode_png(synth_image(label, rng, size)))
    return root
