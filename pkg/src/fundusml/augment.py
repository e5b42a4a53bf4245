"""Training-time augmentations as deterministic-under-seed pixel transforms.

Applied in a fixed order, each gated by its own probability: horizontal
flip, vertical flip, rotation, median blur, additive Gaussian noise,
HSV shift, brightness/contrast shift, cutout.  Every transform preserves
the image dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import RgbImage


@dataclass(frozen=True)
class AugmentConfig:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rotate: float = 0.5
    rotate_limit: float = 30.0           # degrees
    p_median_blur: float = 0.3
    blur_limit: int = 7                  # max odd kernel size
    p_gauss_noise: float = 0.5
    noise_var_limit: float = 0.38        # variance on the [0, 1] scale
    p_hsv: float = 0.3
    hue_shift_limit: float = 10.0        # on the 0..180 hue scale
    sat_shift_limit: float = 10.0        # on the 0..255 scale
    val_shift_limit: float = 10.0
    p_brightness_contrast: float = 0.3
    brightness_limit: float = 0.2
    contrast_limit: float = 0.2
    p_cutout: float = 0.5
    cutout_max_holes: int = 5
    cutout_max_size: int = 20            # px


def _rgb_to_hsv(rgb):
    """(h, w, 3) in [0, 1] -> hsv with h in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    safe = np.where(diff > 0, diff, 1.0)
    h = np.zeros_like(mx)
    h = np.where((mx == r) & (diff > 0), ((g - b) / safe) % 6.0, h)
    h = np.where((mx == g) & (diff > 0), (b - r) / safe + 2.0, h)
    h = np.where((mx == b) & (diff > 0) & (mx != r) & (mx != g), (r - g) / safe + 4.0, h)
    h = (h / 6.0) % 1.0
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def augment(img: RgbImage, cfg: AugmentConfig = AugmentConfig(), seed: int = 0) -> RgbImage:
    rng = np.random.default_rng(seed)
    px = np.array(img.pixels)

    if rng.random() < cfg.p_hflip:
        px = px[:, ::-1, :]
    if rng.random() < cfg.p_vflip:
        px = px[::-1, :, :]
    if rng.random() < cfg.p_rotate:
        angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit)
        px = ndimage.rotate(px, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        px = np.clip(px, 0.0, 255.0)
    if rng.random() < cfg.p_median_blur:
        k = int(rng.choice(np.arange(3, cfg.blur_limit + 1, 2)))
        px = ndimage.median_filter(px, size=(k, k, 1))
    if rng.random() < cfg.p_gauss_noise:
        var = rng.uniform(0.0, cfg.noise_var_limit)
        px = np.clip(px + 255.0 * np.sqrt(var) * rng.standard_normal(px.shape), 0.0, 255.0)
    if rng.random() < cfg.p_hsv:
        dh = rng.uniform(-cfg.hue_shift_limit, cfg.hue_shift_limit) / 180.0
        ds = rng.uniform(-cfg.sat_shift_limit, cfg.sat_shift_limit) / 255.0
        dv = rng.uniform(-cfg.val_shift_limit, cfg.val_shift_limit) / 255.0
        hsv = _rgb_to_hsv(px / 255.0)
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0.0, 1.0)
        hsv[..., 2] = np.clip(hsv[..., 2] + dv, 0.0, 1.0)
        px = np.clip(_hsv_to_rgb(hsv) * 255.0, 0.0, 255.0)
    if rng.random() < cfg.p_brightness_contrast:
        alpha = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
        beta = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit) * 255.0
        px = np.clip(alpha * px + beta, 0.0, 255.0)
    if rng.random() < cfg.p_cutout:
        h, w = px.shape[:2]
        n = int(rng.integers(1, cfg.cutout_max_holes + 1))
        for _ in range(n):
            side = int(rng.integers(1, cfg.cutout_max_size + 1))
            y0 = int(rng.integers(0, max(1, h - side + 1)))
            x0 = int(rng.integers(0, max(1, w - side + 1)))
            px[y0:y0 + min(side, h), x0:x0 + min(side, w), :] = 0.0

    return RgbImage(px)
