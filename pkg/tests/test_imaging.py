import numpy as np
import pytest

from fundusml.imaging import (
    CannyConfig,
    EdgeSet,
    EmptyFov,
    GrayImage,
    ImageTooSmall,
    NoEdges,
    RectOutOfBounds,
    RgbImage,
    ZeroDenominator,
    bilinear_resize,
    blur_metric,
    crop,
    detect_edges,
    extract_fov,
    quality_score,
    read_image,
    read_quality_report,
    to_gray,
    write_png,
    write_quality_report,
)


def rgb_const(h, w, rgb):
    return RgbImage(np.zeros((h, w, 3)) + np.asarray(rgb, dtype=float))


def disc_image(h, w, cy, cx, r, value=220.0):
    yy, xx = np.mgrid[0:h, 0:w]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    px = np.zeros((h, w, 3))
    px[mask] = value
    return RgbImage(px)


class TestToGray:
    def test_white(self):
        g = to_gray(rgb_const(4, 4, (255, 255, 255)))
        assert np.allclose(g.pixels, 255.0)

    def test_pure_red(self):
        g = to_gray(rgb_const(2, 3, (255, 0, 0)))
        assert np.allclose(g.pixels, 76.245)

    def test_equal_channels(self):
        g = to_gray(rgb_const(1, 1, (10, 10, 10)))
        assert g.pixels[0, 0] == pytest.approx(10.0)


class TestDetectEdges:
    def test_constant_image_empty(self):
        e = detect_edges(GrayImage(np.full((12, 12), 77.0)))
        assert e.count() == 0

    def test_vertical_step_confined(self):
        # oracle: raw finite differences peak at the two columns around the step
        w = 16
        px = np.zeros((16, w))
        px[:, w // 2:] = 255.0
        grad = np.abs(np.diff(px[0]))
        step_cols = {int(np.argmax(grad)), int(np.argmax(grad)) + 1}
        e = detect_edges(GrayImage(px), low=50, high=150, sigma=1.4)
        assert e.count() > 0
        cols = set(np.nonzero(e.mask)[1].tolist())
        assert cols <= step_cols

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            detect_edges(GrayImage(np.zeros((2, 2))))

    def test_threshold_order_validated(self):
        with pytest.raises(Exception):
            detect_edges(GrayImage(np.zeros((8, 8))), low=100, high=50)


class TestBlurMetric:
    def test_center_spike_hand_value(self):
        px = np.ones((3, 3))
        px[1, 1] = 9.0
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        bm = blur_metric(GrayImage(px), EdgeSet(mask))
        # sqrt(8 * 64 / 8) / 9
        assert bm == pytest.approx(8.0 / 9.0, abs=1e-12)

    def test_constant_image_zero(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        assert blur_metric(GrayImage(np.full((4, 4), 5.0)), EdgeSet(mask)) == 0.0

    def test_no_edges(self):
        with pytest.raises(NoEdges):
            blur_metric(GrayImage(np.ones((3, 3))), EdgeSet(np.zeros((3, 3), dtype=bool)))

    def test_zero_denominator(self):
        px = np.ones((3, 3))
        px[0, 0] = 0.0
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = True
        with pytest.raises(ZeroDenominator):
            blur_metric(GrayImage(px), EdgeSet(mask))

    def test_border_neighborhood_sizes(self):
        # corner pixel has 3 neighbors; value chosen so the RMS is exact
        px = np.zeros((3, 3))
        px[0, 0] = 6.0
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = True
        bm = blur_metric(GrayImage(px), EdgeSet(mask))
        assert bm == pytest.approx(np.sqrt(3 * 36 / 3) / 6.0, abs=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        patch = rng.uniform(0, 255, (5, 5))
        base = np.zeros((12, 12))
        for oy, ox in ((0, 0), (3, 4), (7, 7)):
            px = base.copy()
            px[oy:oy + 5, ox:ox + 5] = patch
            mask = np.zeros((12, 12), dtype=bool)
            mask[oy + 2, ox + 2] = True
            bm = blur_metric(GrayImage(px), EdgeSet(mask))
            if oy == 0 and ox == 0:
                first = bm
            else:
                assert bm == pytest.approx(first, rel=1e-12)

    def test_intensity_scale_invariance(self):
        rng = np.random.default_rng(1)
        px = rng.uniform(1, 100, (8, 8))
        mask = rng.random((8, 8)) < 0.3
        mask[4, 4] = True
        bm1 = blur_metric(GrayImage(px), EdgeSet(mask))
        bm2 = blur_metric(GrayImage(px * 2.5), EdgeSet(mask))
        assert bm2 == pytest.approx(bm1, rel=1e-12)


class TestQualityScore:
    def test_constant_degenerate(self):
        q = quality_score(rgb_const(10, 10, (30, 30, 30)))
        assert q.score == 0.0 and q.degenerate

    def test_matches_composition(self):
        img = disc_image(24, 24, cy=12, cx=12, r=7)
        cfg = CannyConfig()
        q = quality_score(img, cfg)
        gray = to_gray(img)
        edges = detect_edges(gray, low=cfg.low, high=cfg.high, sigma=cfg.sigma)
        assert not q.degenerate
        assert q.score == blur_metric(gray, edges)

    def test_sharp_beats_blurred(self):
        px = np.zeros((20, 20, 3))
        px[:, 10:, :] = 255.0
        sharp = RgbImage(px)
        k = np.ones((5, 5)) / 25.0
        from scipy.ndimage import convolve
        blurred = RgbImage(np.dstack([convolve(px[:, :, c], k, mode="nearest") for c in range(3)]))
        qs = quality_score(sharp)
        qb = quality_score(blurred)
        assert qs.score > qb.score


class TestExtractFov:
    def test_all_bright_full_rect(self):
        img = rgb_const(6, 9, (200, 10, 10))
        assert extract_fov(img) == (0, 0, 8, 5)

    def test_seven_pixel_scan(self):
        px = np.zeros((5, 7, 3))
        px[2, :, 0] = [0, 0, 10, 200, 210, 0, 0]
        px[:, 3, 0] = 100.0
        x0, y0, x1, y1 = extract_fov(RgbImage(px))
        assert (x0, x1) == (3, 4)

    def test_all_black_empty(self):
        with pytest.raises(EmptyFov):
            extract_fov(rgb_const(5, 5, (0, 0, 0)))

    def test_disc_bounding_box(self):
        img = disc_image(41, 61, cy=20, cx=30, r=12)
        x0, y0, x1, y1 = extract_fov(img)
        assert abs(x0 - 18) <= 1 and abs(x1 - 42) <= 1
        assert abs(y0 - 8) <= 1 and abs(y1 - 32) <= 1

    def test_idempotent_on_disc(self):
        img = disc_image(41, 61, cy=20, cx=30, r=12)
        first = crop(img, extract_fov(img))
        rect2 = extract_fov(first)
        assert rect2 == (0, 0, first.width - 1, first.height - 1)


class TestCrop:
    def test_full_rect_identity(self):
        rng = np.random.default_rng(4)
        img = RgbImage(rng.uniform(0, 255, (5, 7, 3)))
        out = crop(img, (0, 0, 6, 4))
        assert np.array_equal(out.pixels, img.pixels)

    def test_single_pixel(self):
        rng = np.random.default_rng(5)
        img = RgbImage(rng.uniform(0, 255, (5, 7, 3)))
        out = crop(img, (2, 3, 2, 3))
        assert out.width == out.height == 1
        assert np.array_equal(out.pixels[0, 0], img.pixels[3, 2])

    def test_out_of_bounds(self):
        img = rgb_const(5, 7, (1, 1, 1))
        with pytest.raises(RectOutOfBounds):
            crop(img, (0, 0, 7, 4))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    img = RgbImage(rng.integers(0, 256, (9, 11, 3)).astype(float))
    path = tmp_path / "x.png"
    write_png(img, path)
    back = read_image(path)
    assert np.array_equal(back.pixels, img.pixels)


def test_quality_report_round_trip(tmp_path):
    from fundusml.imaging import QualityScore
    rows = [("b", QualityScore(0.5, False)), ("a", QualityScore(0.9, False)),
            ("c", QualityScore(0.0, True))]
    path = tmp_path / "q.csv"
    write_quality_report(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,score,degenerate_flag"
    assert [l.split(",")[0] for l in lines[1:]] == ["a", "b", "c"]  # descending score
    assert read_quality_report(path) == {"a": 0.9, "b": 0.5, "c": 0.0}


def test_bilinear_resize_shapes_and_corners():
    arr = np.array([[0.0, 0.0], [0.0, 1.0]])
    up = bilinear_resize(arr, 8, 8)
    assert up.shape == (8, 8)
    assert up.max() == pytest.approx(arr.max(), abs=1e-9)
    assert up[7, 7] == up.max() and up[0, 0] == up.min()
    const = bilinear_resize(np.full((3, 3), 4.2), 10, 5)
    assert np.allclose(const, 4.2)
