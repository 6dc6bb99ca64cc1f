"""Procedural test clips: smooth shaded shapes drifting across a gradient."""

from __future__ import annotations

import numpy as np


def synthetic_clip(frames: int = 12, height: int = 64, width: int | None = None, seed: int = 0,
                   low: float = 0.15, high: float = 0.85) -> np.ndarray:
    """A ``frames x 3 x H x W`` float32 clip with values in ``[low, high]``.

    Content is a colour gradient plus a few soft discs and one hard-edged
    rectangle, each translating at a constant per-frame velocity.
    """
    width = width or height
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    base_dir = rng.uniform(-1, 1, size=(3, 2))
    base_off = rng.uniform(0.3, 0.7, size=3)
    discs = [(rng.uniform(0.2, 0.8, 2), rng.uniform(-0.02, 0.02, 2), rng.uniform(0.06, 0.15),
              rng.uniform(-0.4, 0.4, 3)) for _ in range(3)]
    rect_pos, rect_vel = rng.uniform(0.2, 0.6, 2), rng.uniform(-0.015, 0.015, 2)
    rect_size, rect_col = rng.uniform(0.15, 0.3, 2), rng.uniform(-0.3, 0.3, 3)

    out = np.empty((frames, 3, height, width), dtype=np.float64)
    for t in range(frames):
        img = base_off[:, None, None] + 0.2 * (base_dir[:, :1, None] * (yy - 0.5) + base_dir[:, 1:, None] * (xx - 0.5))
        for centre, vel, radius, colour in discs:
            cy, cx = centre + t * vel
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
            img = img + colour[:, None, None] * blob
        ry, rx = rect_pos + t * rect_vel
        mask = (yy >= ry) & (yy < ry + rect_size[0]) & (xx >= rx) & (xx < rx + rect_size[1])
        img = img + rect_col[:, None, None] * mask
        out[t] = img
    lo, hi = out.min(), out.max()
    out = low + (out - lo) / max(hi - lo, 1e-12) * (high - low)
    return out.astype(np.float32)
