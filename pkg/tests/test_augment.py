import numpy as np
import pytest

from fundusml.augment import AugmentConfig, _hsv_to_rgb, _rgb_to_hsv, augment
from fundusml.imaging import RgbImage

OFF = AugmentConfig(p_hflip=0, p_vflip=0, p_rotate=0, p_median_blur=0,
                    p_gauss_noise=0, p_hsv=0, p_brightness_contrast=0, p_cutout=0)


def random_image(seed=0, h=24, w=24):
    rng = np.random.default_rng(seed)
    return RgbImage(rng.uniform(0, 255, (h, w, 3)))


def test_probability_zero_is_identity():
    img = random_image()
    for seed in range(5):
        out = augment(img, OFF, seed=seed)
        assert np.array_equal(out.pixels, img.pixels)


def test_forced_hflip_is_involution():
    from dataclasses import replace
    cfg = replace(OFF, p_hflip=1.0)
    img = RgbImage(np.array([[[1.0, 2, 3], [4, 5, 6]]]))
    once = augment(img, cfg, seed=1)
    assert np.array_equal(once.pixels[0, 0], [4, 5, 6])
    assert np.array_equal(once.pixels[0, 1], [1, 2, 3])
    twice = augment(once, cfg, seed=99)
    assert np.array_equal(twice.pixels, img.pixels)


def test_forced_vflip_is_involution():
    from dataclasses import replace
    cfg = replace(OFF, p_vflip=1.0)
    img = random_image(3)
    assert np.array_equal(augment(augment(img, cfg, 0), cfg, 1).pixels, img.pixels)


def test_forced_cutout_zero_square_regions():
    from dataclasses import replace
    cfg = replace(OFF, p_cutout=1.0)
    img = RgbImage(np.full((32, 32, 3), 200.0))
    out = augment(img, cfg, seed=7)
    diff = np.any(out.pixels != img.pixels, axis=2)
    assert diff.any()
    assert np.all(out.pixels[diff] == 0.0)
    # changed area is bounded by 5 squares of up to 20x20
    assert diff.sum() <= 5 * 20 * 20


def test_dimensions_preserved_all_transforms_on():
    cfg = AugmentConfig(p_hflip=1, p_vflip=1, p_rotate=1, p_median_blur=1,
                        p_gauss_noise=1, p_hsv=1, p_brightness_contrast=1, p_cutout=1)
    img = random_image(4, h=19, w=31)
    out = augment(img, cfg, seed=11)
    assert (out.height, out.width) == (19, 31)
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 255.0


def test_deterministic_under_seed():
    img = random_image(5)
    cfg = AugmentConfig()
    a = augment(img, cfg, seed=42)
    b = augment(img, cfg, seed=42)
    assert np.array_equal(a.pixels, b.pixels)


def test_different_seeds_differ():
    img = random_image(6)
    cfg = AugmentConfig()
    outs = [augment(img, cfg, seed=s).pixels for s in range(4)]
    assert any(not np.array_equal(outs[0], o) for o in outs[1:])


def test_hflip_rate_over_seeds():
    from dataclasses import replace
    cfg = replace(OFF, p_hflip=0.5)
    img = RgbImage(np.array([[[1.0, 1, 1], [2, 2, 2]]]))
    flips = 0
    for seed in range(10000):
        out = augment(img, cfg, seed=seed)
        if out.pixels[0, 0, 0] == 2.0:
            flips += 1
    assert abs(flips / 10000 - 0.5) <= 0.02


def test_rotation_reflects_at_border():
    from dataclasses import replace
    cfg = replace(OFF, p_rotate=1.0)
    img = RgbImage(np.full((16, 16, 3), 99.0))
    out = augment(img, cfg, seed=13)
    assert np.allclose(out.pixels, 99.0)  # constant image is rotation-invariant


def test_hsv_round_trip():
    rng = np.random.default_rng(8)
    rgb = rng.random((10, 10, 3))
    back = _hsv_to_rgb(_rgb_to_hsv(rgb))
    assert np.allclose(back, rgb, atol=1e-9)


def test_gauss_noise_changes_pixels_but_stays_in_range():
    from dataclasses import replace
    cfg = replace(OFF, p_gauss_noise=1.0)
    img = RgbImage(np.full((8, 8, 3), 128.0))
    out = augment(img, cfg, seed=21)
    assert not np.array_equal(out.pixels, img.pixels)
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 255.0
