"""Class activation maps: weighted sums of feature-grid channels, squashed
through a sigmoid and min-max normalized, then upsampled over the source
image as a blue-to-red overlay."""

from __future__ import annotations

import numpy as np

from .ctran import DimMismatch, FeatureGrid
from .imaging import RgbImage, bilinear_resize


def cam(features: FeatureGrid, class_weights) -> np.ndarray:
    """(h, w) heat map in [0, 1]; a constant raw map yields all zeros."""
    w = np.asarray(class_weights, dtype=float)
    if w.shape != (features.d,):
        raise DimMismatch(f"expected {features.d} class weights, got {w.shape}")
    raw = (features.values @ w).reshape(features.h, features.w)
    squashed = 1.0 / (1.0 + np.exp(-raw))
    lo, hi = squashed.min(), squashed.max()
    if hi == lo:
        return np.zeros_like(squashed)
    return (squashed - lo) / (hi - lo)


def render_cam(heat: np.ndarray, target_w: int, target_h: int,
               base: RgbImage | None = None, opacity: float = 0.4) -> RgbImage:
    """Bilinear-upsampled blue->red tint, blended over `base` when given."""
    up = np.clip(bilinear_resize(np.asarray(heat, dtype=float), target_h, target_w), 0.0, 1.0)
    ramp = np.stack([255.0 * up, np.zeros_like(up), 255.0 * (1.0 - up)], axis=-1)
    if base is None:
        return RgbImage(ramp)
    if base.width != target_w or base.height != target_h:
        raise DimMismatch(f"base is {base.width}x{base.height}, target {target_w}x{target_h}")
    return RgbImage((1.0 - opacity) * base.pixels + opacity * ramp)
