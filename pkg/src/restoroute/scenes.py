"""Procedural ground-truth clips for desk-scale experiments."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .media import VideoClip, hsv_to_rgb

_DRIFTS = [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1), (1, -1)]


def _canvas(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= height
    xx /= width

    def field(lo, hi, terms=3):
        acc = np.zeros_like(xx)
        for _ in range(terms):
            fx, fy = rng.uniform(0.3, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        acc = (acc - acc.min()) / (np.ptp(acc) + 1e-12)
        return lo + (hi - lo) * acc

    hue = (field(0.0, 1.0) + rng.uniform()) % 1.0
    hsv = np.stack([hue, field(0.55, 0.9), field(0.55, 0.9)], axis=-1)

    for _ in range(rng.integers(10, 16)):
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.04, 0.18, size=2)
        color = [rng.uniform(), rng.uniform(0.5, 1.0), rng.uniform(0.25, 1.0)]
        if rng.uniform() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        hsv[mask] = color

    rgb = hsv_to_rgb(hsv)
    texture = ndimage.gaussian_filter(rng.standard_normal((height, width)), 2.5)
    texture *= 0.02 / (texture.std() + 1e-12)
    return np.clip(rgb + texture[..., None], 0.0, 1.0)


def synthetic_scene(
    width: int = 320,
    height: int = 180,
    frames: int = 16,
    fps: float = 30.0,
    seed: int = 0,
    clip_id: str | None = None,
) -> VideoClip:
    """A colourful, slowly panning scene with sharp edges and fine texture."""
    rng = np.random.default_rng(seed)
    dx, dy = _DRIFTS[int(rng.integers(len(_DRIFTS)))]
    margin = frames + 1
    canvas = _canvas(width + 2 * margin, height + 2 * margin, rng)
    out = np.empty((frames, height, width, 3))
    for t in range(frames):
        oy, ox = margin + dy * t, margin + dx * t
        out[t] = canvas[oy : oy + height, ox : ox + width]
    return VideoClip(out, fps, clip_id or f"scene{seed}")
