"""Pixel-level primitives: grayscale conversion, Canny edge detection, the
edge-anchored blur/sharpness metric, and field-of-view extraction.

The blur score of an image I with edge set E is

    BM = sum_{(x,y) in E} sqrt( sum_{(x',y') in N_xy} (I(x,y)-I(x',y'))^2 / |N_xy| )
         -----------------------------------------------------------------------
                              sum_{(x,y) in E} I(x,y)

where N_xy is the 8-neighborhood of (x,y), clipped at image borders so
|N_xy| is 3 at corners, 5 along edges and 8 in the interior.  Sharp images
have large intensity changes across edges and therefore a high score.

FOV extraction finds the retinal disc on the red channel: one horizontal
and one vertical centerline scan, each thresholded at max(scan) * 0.06;
the crop bounds are the first and last above-threshold positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

FOV_THRESHOLD_FACTOR = 0.06

#: luma weights for RGB -> gray
_LUMA = np.array([0.299, 0.587, 0.114])


class ImagingError(Exception):
    pass


class ImageTooSmall(ImagingError):
    pass


class NoEdges(ImagingError):
    pass


class ZeroDenominator(ImagingError):
    pass


class EmptyFov(ImagingError):
    pass


class RectOutOfBounds(ImagingError):
    pass


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray  # (h, w) float64 in [0, 255]

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim != 2:
            raise ImagingError("gray image must be 2-D")
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 255):
            raise ImagingError("gray values must be finite and within [0, 255]")
        object.__setattr__(self, "pixels", _freeze(p))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class RgbImage:
    pixels: np.ndarray  # (h, w, 3) float64 in [0, 255]

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ImagingError("rgb image must be (h, w, 3)")
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 255):
            raise ImagingError("rgb values must be finite and within [0, 255]")
        object.__setattr__(self, "pixels", _freeze(p))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class EdgeSet:
    mask: np.ndarray  # (h, w) bool

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ImagingError("edge mask must be 2-D")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class CannyConfig:
    sigma: float = 1.4
    low: float = 50.0
    high: float = 150.0


def to_gray(img: RgbImage) -> GrayImage:
    return GrayImage(img.pixels @ _LUMA)


def detect_edges(img: GrayImage, low: float = 50.0, high: float = 150.0,
                 sigma: float = 1.4) -> EdgeSet:
    """Canny edge detection: Gaussian smoothing, Sobel gradients,
    non-maximum suppression and double-threshold hysteresis.

    Thresholds apply to the raw Sobel gradient magnitude of a [0, 255]
    image (so values well above 255 are meaningful, as in the usual
    50/150 defaults).
    """
    if not (0 <= low <= high):
        raise ImagingError(f"need 0 <= low <= high, got low={low} high={high}")
    if img.height < 3 or img.width < 3:
        raise ImageTooSmall(f"{img.width}x{img.height} image: both dimensions must be >= 3")

    smoothed = ndimage.gaussian_filter(img.pixels, sigma=sigma)
    gx = ndimage.sobel(smoothed, axis=1)
    gy = ndimage.sobel(smoothed, axis=0)
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0

    # non-maximum suppression against the two neighbors along the gradient
    h, w = mag.shape
    keep = np.zeros((h, w), dtype=bool)
    m = mag[1:-1, 1:-1]
    a = angle[1:-1, 1:-1]
    horiz = (a < 22.5) | (a >= 157.5)
    diag1 = (a >= 22.5) & (a < 67.5)
    vert = (a >= 67.5) & (a < 112.5)
    diag2 = (a >= 112.5) & (a < 157.5)
    n1 = np.where(horiz, mag[1:-1, 2:],
         np.where(diag1, mag[2:, :-2],
         np.where(vert, mag[2:, 1:-1], mag[:-2, :-2])))
    n2 = np.where(horiz, mag[1:-1, :-2],
         np.where(diag1, mag[:-2, 2:],
         np.where(vert, mag[:-2, 1:-1], mag[2:, 2:])))
    keep[1:-1, 1:-1] = (m >= n1) & (m >= n2)
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high
    weak = (nms >= low) & ~strong

    # hysteresis: keep weak pixels 8-connected to a strong pixel
    labels, n = ndimage.label(strong | weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return EdgeSet(np.zeros((h, w), dtype=bool))
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return EdgeSet(has_strong[labels])


def blur_metric(img: GrayImage, edges: EdgeSet) -> float:
    """Edge-anchored sharpness score (see module docstring).

    Raises NoEdges for an empty edge set and ZeroDenominator when the
    summed intensity over the edge pixels is zero.
    """
    if edges.mask.shape != img.pixels.shape:
        raise ImagingError("edge mask dimensions must match image")
    if not edges.mask.any():
        raise NoEdges("empty edge set")

    p = img.pixels
    h, w = p.shape
    ssd = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            ys_n = slice(max(-dy, 0), h + min(-dy, 0))
            xs_n = slice(max(-dx, 0), w + min(-dx, 0))
            diff = p[ys, xs] - p[ys_n, xs_n]
            ssd[ys, xs] += diff * diff
            cnt[ys, xs] += 1.0

    rms = np.sqrt(ssd / cnt)
    denom = float(p[edges.mask].sum())
    if denom == 0.0:
        raise ZeroDenominator("edge pixels sum to zero intensity")
    return float(rms[edges.mask].sum()) / denom


@dataclass(frozen=True)
class QualityScore:
    score: float
    degenerate: bool


def quality_score(img: RgbImage, canny_cfg: CannyConfig = CannyConfig()) -> QualityScore:
    """to_gray -> detect_edges -> blur_metric, composed.

    Degenerate inputs (no edges, or edges of zero total intensity) score 0
    with the flag set instead of raising, so batch runs never abort.
    """
    gray = to_gray(img)
    edges = detect_edges(gray, low=canny_cfg.low, high=canny_cfg.high, sigma=canny_cfg.sigma)
    try:
        return QualityScore(blur_metric(gray, edges), False)
    except (NoEdges, ZeroDenominator):
        return QualityScore(0.0, True)


def extract_fov(img: RgbImage) -> tuple[int, int, int, int]:
    """Locate the field of view from the red channel's centerline scans.

    Returns the inclusive crop rectangle (x0, y0, x1, y1).  Raises EmptyFov
    when a scan has no position above its threshold (an all-black image).
    """
    red = img.pixels[:, :, 0]
    row = red[img.height // 2, :]
    col = red[:, img.width // 2]
    xs = np.nonzero(row > row.max() * FOV_THRESHOLD_FACTOR)[0]
    ys = np.nonzero(col > col.max() * FOV_THRESHOLD_FACTOR)[0]
    if xs.size == 0 or ys.size == 0:
        raise EmptyFov("no scan position above threshold")
    return int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1])


def crop(img: RgbImage, rect: tuple[int, int, int, int]) -> RgbImage:
    x0, y0, x1, y1 = rect
    if not (0 <= x0 <= x1 < img.width and 0 <= y0 <= y1 < img.height):
        raise RectOutOfBounds(f"rect {rect} outside {img.width}x{img.height} image")
    return RgbImage(img.pixels[y0:y1 + 1, x0:x1 + 1])


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (h, w) or (h, w, c) array to (out_h, out_w)."""
    in_h, in_w = arr.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if arr.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return top * (1 - wy) + bot * wy


def read_image(path) -> RgbImage:
    """Read a PNG or JPEG file as an RGB image."""
    with Image.open(path) as im:
        return RgbImage(np.asarray(im.convert("RGB"), dtype=float))


def write_png(img: RgbImage, path) -> None:
    arr = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def write_quality_report(rows: list[tuple[str, QualityScore]], path) -> None:
    """CSV `id,score,degenerate_flag`, sorted descending by score."""
    ordered = sorted(rows, key=lambda r: (-r[1].score, r[0]))
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("id,score,degenerate_flag\n")
        for sid, q in ordered:
            f.write(f"{sid},{q.score!r},{int(q.degenerate)}\n")


def read_quality_report(path) -> dict[str, float]:
    scores = {}
    with open(path, newline="", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "id,score,degenerate_flag":
            raise ImagingError(f"{path}: unexpected quality report header {header!r}")
        for line in f:
            sid, score, _flag = line.rstrip("\n").split(",")
            scores[sid] = float(score)
    return scores
