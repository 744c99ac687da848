"""Low-level raster primitives shared by both detection stages and the jig.

Images are plain numpy arrays in 64-bit floats: grayscale ``(H, W)`` and
RGB ``(H, W, 3)``, intensities in [0, 1]. Point coordinates are ``(x, y)``
with the center of pixel ``img[i, j]`` at ``x=j, y=i``.
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass
from scipy import ndimage
from typing import List, Sequence, Tuple, Union
from scrloc.errors import AmbiguousMarker, NoCircle, NoCross, NoMarker


GrayImage = npt.NDArray[np.float64]
RgbImage = npt.NDArray[np.float64]
ProbabilityMap = npt.NDArray[np.float64]
BinaryMask = npt.NDArray[np.bool_]
Point = Tuple[float, float]

GAMMA_MIN = 0.3
GAMMA_MAX = 3.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
N_BINS = 256
BOX_PADDING = 6
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in parent-image pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f'box must have positive size, got {self}')
        if self.x < 0 or self.y < 0:
            raise ValueError(f'box must have a non-negative offset, got {self}')

    @property
    def offset(self) -> npt.NDArray:
        return np.array([self.x, self.y], dtype=float)

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def fits(self, shape: Sequence[int]) -> bool:
        return self.y + self.h <= shape[0] and self.x + self.w <= shape[1]

    def contains(self, point: Point) -> bool:
        x, y = point
        return (self.x - 0.5 <= x <= self.x + self.w - 0.5
                and self.y - 0.5 <= y <= self.y + self.h - 0.5)

    def to_dict(self) -> dict:
        return {'x': int(self.x), 'y': int(self.y), 'w': int(self.w), 'h': int(self.h)}


@dataclass(frozen=True)
class CircleFit:
    center: Point
    radius: float
    score: float


@dataclass(frozen=True)
class CrossFit:
    center: Point
    score: float


def check_gamma(gamma: float) -> float:
    if not (GAMMA_MIN <= gamma <= GAMMA_MAX):
        raise ValueError(
            f'gamma must lie in [{GAMMA_MIN}, {GAMMA_MAX}], got {gamma}'
        )
    return float(gamma)


def gamma_correct(
        img: Union[GrayImage, RgbImage],
        gamma: float,
) -> Union[GrayImage, RgbImage]:
    """Replace every channel value v by v**gamma."""
    gamma = check_gamma(gamma)
    if gamma == 1.0:
        return np.array(img, dtype=float, copy=True)
    return np.power(img, gamma)


def auto_gamma(img: Union[GrayImage, RgbImage]) -> float:
    """Gamma that maps the mean intensity to 0.5, clamped to the legal range."""
    if img.size == 0:
        raise ValueError('auto_gamma needs a non-empty image')
    mean = float(np.mean(img))
    if mean <= 0.0:
        return GAMMA_MIN
    if mean >= 1.0:
        return GAMMA_MAX
    return float(np.clip(np.log(0.5) / np.log(mean), GAMMA_MIN, GAMMA_MAX))


def to_grayscale(img: RgbImage) -> GrayImage:
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f'expected an (H, W, 3) image, got {img.shape}')
    return np.clip(img @ LUMA_WEIGHTS, 0.0, 1.0)


def _bin_index(img: GrayImage) -> npt.NDArray:
    return np.minimum((np.clip(img, 0.0, 1.0) * N_BINS).astype(np.intp), N_BINS - 1)


def equalize_hist(img: GrayImage) -> GrayImage:
    """Remap intensities through the 256-bin cumulative histogram."""
    idx = _bin_index(img)
    hist = np.bincount(idx.ravel(), minlength=N_BINS)
    cdf = np.cumsum(hist) / idx.size
    return cdf[idx]


def threshold(pmap: ProbabilityMap, tau: float) -> BinaryMask:
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f'tau must lie in [0, 1], got {tau}')
    return pmap >= tau


def connected_regions(
        mask: BinaryMask,
        min_area: int,
        padding: int = BOX_PADDING,
) -> List[BoundingBox]:
    """Padded boxes of the 8-connected components with at least min_area pixels.

    Boxes are clamped to the image and ordered row-major by the top-left
    corner of the unpadded component.
    """
    if min_area < 1:
        raise ValueError(f'min_area must be >= 1, got {min_area}')
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    h, w = mask.shape
    found = []
    for lab, (sy, sx) in enumerate(ndimage.find_objects(labels), start=1):
        if areas[lab] < min_area:
            continue
        y0 = max(sy.start - padding, 0)
        x0 = max(sx.start - padding, 0)
        y1 = min(sy.stop + padding, h)
        x1 = min(sx.stop + padding, w)
        found.append(((sy.start, sx.start, lab), BoundingBox(x0, y0, x1 - x0, y1 - y0)))
    found.sort(key=lambda item: item[0])
    return [box for _, box in found]


def expand_box(
        box: BoundingBox,
        min_size: int,
        shape: Sequence[int],
) -> BoundingBox:
    """Grow a box symmetrically to at least min_size per side, kept inside shape."""

    def grow(start, length, limit):
        if length >= min_size:
            return start, length
        new_length = min(min_size, limit)
        new_start = int(np.floor(start + (length - new_length) / 2))
        new_start = min(max(new_start, 0), limit - new_length)
        return new_start, new_length

    x, w = grow(box.x, box.w, shape[1])
    y, h = grow(box.y, box.h, shape[0])
    return BoundingBox(x, y, w, h)


def _splat(acc, r_idx, cx, cy):
    """Bilinear vote splatting into acc[r, y, x]; out-of-range corners are dropped."""
    _, h, w = acc.shape
    x0 = np.floor(cx).astype(np.intp)
    y0 = np.floor(cy).astype(np.intp)
    fx = cx - x0
    fy = cy - y0
    for dx, dy, wt in (
            (0, 0, (1 - fx) * (1 - fy)),
            (1, 0, fx * (1 - fy)),
            (0, 1, (1 - fx) * fy),
            (1, 1, fx * fy),
    ):
        xx = x0 + dx
        yy = y0 + dy
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        np.add.at(acc, (r_idx[ok], yy[ok], xx[ok]), wt[ok])


def detect_outer_circle(
        img: GrayImage,
        r_min: int,
        r_max: int,
        score_floor: float = 0.35,
        edge_fraction: float = 0.25,
) -> CircleFit:
    """Gradient-vote circle detector with 3x3 centroid refinement.

    Every edge pixel votes at distance r along both gradient directions for
    each integer radius in [r_min, r_max]. The peak of the 3x3-summed
    accumulator is refined to sub-pixel by the vote centroid of its
    neighborhood; the score is that vote mass over the circle perimeter,
    capped at 1.
    """
    h, w = img.shape
    if r_min < 2 or r_max < r_min:
        raise ValueError(f'invalid radius range [{r_min}, {r_max}]')
    if r_max >= min(h, w) / 2:
        raise ValueError(f'r_max={r_max} too large for a {w}x{h} image')

    gx = ndimage.sobel(img, axis=1, mode='nearest')
    gy = ndimage.sobel(img, axis=0, mode='nearest')
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-9:
        raise NoCircle('image has no edges')
    ys, xs = np.nonzero(mag >= edge_fraction * peak)
    ux = gx[ys, xs] / mag[ys, xs]
    uy = gy[ys, xs] / mag[ys, xs]

    radii = np.arange(r_min, r_max + 1)
    acc = np.zeros((len(radii), h, w))
    r_idx = np.broadcast_to(np.arange(len(radii)), (len(xs), len(radii))).ravel()
    for sign in (1.0, -1.0):
        cx = xs[:, None] - sign * radii[None, :] * ux[:, None]
        cy = ys[:, None] - sign * radii[None, :] * uy[:, None]
        _splat(acc, r_idx, cx.ravel(), cy.ravel())

    summed = ndimage.uniform_filter(acc, size=(1, 3, 3), mode='constant')
    ri, yi, xi = np.unravel_index(np.argmax(summed), summed.shape)
    y_lo, y_hi = max(yi - 1, 0), min(yi + 2, h)
    x_lo, x_hi = max(xi - 1, 0), min(xi + 2, w)
    block = acc[ri, y_lo:y_hi, x_lo:x_hi]
    mass = block.sum()
    if mass <= 0:
        raise NoCircle('no votes at the accumulator peak')
    by, bx = np.mgrid[y_lo:y_hi, x_lo:x_hi]
    center = (float((block * bx).sum() / mass), float((block * by).sum() / mass))
    radius = float(radii[ri])
    score = float(min(1.0, mass / (2 * np.pi * radius)))
    if score < score_floor:
        raise NoCircle(f'peak score {score:.3f} below floor {score_floor}')
    return CircleFit(center=center, radius=radius, score=score)


def detect_cross_center(
        img: GrayImage,
        head: CircleFit,
        margin: float = 0.25,
        min_dark: int = 6,
        inner_fraction: float = 0.8,
) -> CrossFit:
    """Dark-mass centroid of the recess inside the head disk.

    Pixels within ``inner_fraction`` of the head radius that are darker than
    the disk median by ``margin`` are weighted by their darkness. The score
    compares the dark mass of the four diagonal wedges about the centroid
    (1.0 for a perfectly 4-fold symmetric recess).
    """
    h, w = img.shape
    cx, cy = head.center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ValueError(f'head center {head.center} outside the image')
    yy, xx = np.mgrid[0:h, 0:w]
    inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= (inner_fraction * head.radius) ** 2
    if not inside.any():
        raise NoCross('head disk contains no pixels')
    median = np.median(img[inside])
    dark = inside & (img < median - margin)
    n_dark = int(dark.sum())
    if n_dark < min_dark:
        raise NoCross(f'{n_dark} dark pixels inside the head, need {min_dark}')
    wt = median - img[dark]
    xd = xx[dark]
    yd = yy[dark]
    center = (float(np.sum(wt * xd) / wt.sum()), float(np.sum(wt * yd) / wt.sum()))

    ang = np.arctan2(yd - center[1], xd - center[0])
    wedge = np.floor((ang + np.pi / 4) / (np.pi / 2)).astype(np.intp) % 4
    mass = np.bincount(wedge, weights=wt, minlength=4)
    score = float(4 * mass.min() / mass.sum())
    return CrossFit(center=center, score=score)


ColorWindow = Sequence[Tuple[float, float]]


def _marker_weight(img: RgbImage, color_window: ColorWindow) -> npt.NDArray:
    """Excess of the marker's dominant channel over the other two channels."""
    c = int(np.argmax([lo for lo, _ in color_window]))
    others = [i for i in range(3) if i != c]
    return np.clip(img[..., c] - img[..., others].max(axis=-1), 0.0, None)


def find_marker_centroid(
        img: RgbImage,
        color_window: ColorWindow,
        min_area: int,
        max_area: int,
        support_margin: int = 12,
) -> Point:
    """Sub-pixel centroid of the single marker-colored blob in img.

    The color window selects candidate pixels; exactly one 8-connected
    component must have an area in [min_area, max_area]. Its centroid is
    weighted by marker-channel excess over the component box grown by
    ``support_margin`` so that the blurred rim contributes.
    """
    if len(color_window) != 3:
        raise ValueError('color_window needs one (lo, hi) pair per channel')
    if any(lo > hi for lo, hi in color_window):
        raise ValueError(f'invalid color window {color_window}')
    if min_area > max_area:
        raise ValueError(f'min_area {min_area} exceeds max_area {max_area}')

    lo = np.array([c[0] for c in color_window])
    hi = np.array([c[1] for c in color_window])
    mask = np.all((img >= lo) & (img <= hi), axis=-1)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    candidates = [lab for lab in range(1, n + 1) if min_area <= areas[lab] <= max_area]
    if not candidates:
        raise NoMarker('no marker-colored blob within the area limits')
    if len(candidates) > 1:
        raise AmbiguousMarker(f'{len(candidates)} marker candidates')

    sy, sx = ndimage.find_objects(labels)[candidates[0] - 1]
    h, w = mask.shape
    y0 = max(sy.start - support_margin, 0)
    y1 = min(sy.stop + support_margin, h)
    x0 = max(sx.start - support_margin, 0)
    x1 = min(sx.stop + support_margin, w)
    wt = _marker_weight(img[y0:y1, x0:x1], color_window)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    total = wt.sum()
    if not total > 0:
        raise NoMarker('blob has no marker-channel excess to weight the centroid')
    return (float((wt * xx).sum() / total), float((wt * yy).sum() / total))
