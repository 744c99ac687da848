"""Two-stage screw detection on RGB-D frames.

Stage 1 runs a single recall-biased network over the whole frame and boxes
every connected blob of likely screw pixels. Stage 2 re-scores each box with
an ensemble on a gamma-normalized crop; accepted crops get a sub-pixel
cross-recess center (head circle fused with the recess centroid) that is
lifted to 3D through the depth map.
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, asdict, field
from typing import List, Optional, Sequence, Tuple
from scrloc.errors import NoCenter, NoCircle, NoCross, NoDepth
from scrloc.logging import get_logger
from scrloc.models.fcn.network import FcnModel, forward
from scrloc.synth.camera import CameraIntrinsics, pinhole_back_project
from scrloc.tools.imgproc import (
    BinaryMask,
    BoundingBox,
    CircleFit,
    GrayImage,
    Point,
    RgbImage,
    auto_gamma,
    connected_regions,
    detect_cross_center,
    detect_outer_circle,
    equalize_hist,
    expand_box,
    gamma_correct,
    threshold,
    to_grayscale,
)


logger = get_logger('detect')

DepthMap = npt.NDArray[np.float64]


@dataclass(frozen=True)
class RgbdImage:
    rgb: RgbImage
    depth: DepthMap     # mm along the optical axis, NaN where invalid

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[-1] != 3:
            raise ValueError(f'rgb must be (H, W, 3), got {self.rgb.shape}')
        if self.depth.shape != self.rgb.shape[:2]:
            raise ValueError(f'depth {self.depth.shape} does not match rgb {self.rgb.shape[:2]}')
        valid = np.isfinite(self.depth)
        if np.any(self.depth[valid] <= 0):
            raise ValueError('valid depths must be positive')


@dataclass(frozen=True)
class DetectParams:
    tau_coarse: float = 0.3
    tau_fine: float = 0.6
    min_area: int = 20
    verify_fraction: float = 0.15
    # Share of the cross centroid in the fused center.
    fuse_weight_cross: float = 0.7
    depth_window: int = 3
    patch_size: int = 34
    box_padding: int = 6
    verify_radius: float = 0.4
    r_min: int = 7
    r_max: int = 15
    cross_margin: float = 0.35
    merge_radius: float = 4.0

    def __post_init__(self):
        for name in ('tau_coarse', 'tau_fine', 'fuse_weight_cross'):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f'{name} must lie in [0, 1], got {value}')
        if not (0.0 < self.verify_fraction < 1.0):
            raise ValueError(f'verify_fraction must lie in (0, 1), got {self.verify_fraction}')
        if self.depth_window < 1 or self.depth_window % 2 == 0:
            raise ValueError(f'depth_window must be odd and >= 1, got {self.depth_window}')
        if self.min_area < 1:
            raise ValueError(f'min_area must be >= 1, got {self.min_area}')


@dataclass(frozen=True)
class ScrewDetection:
    p_global: Point
    p_3d: Tuple[float, float, float]
    confidence: float
    box: BoundingBox

    def to_dict(self) -> dict:
        return {
            'x': self.p_global[0],
            'y': self.p_global[1],
            'X': self.p_3d[0],
            'Y': self.p_3d[1],
            'Z': self.p_3d[2],
            'confidence': self.confidence,
            **{f'box_{k}': v for k, v in self.box.to_dict().items()},
        }


@dataclass(frozen=True)
class DroppedCandidate:
    box: BoundingBox
    drop_reason: str
    detection: Optional[ScrewDetection] = None


@dataclass
class DetectionResult:
    detections: List[ScrewDetection]
    candidates: List[BoundingBox]
    dropped: List[DroppedCandidate] = field(default_factory=list)

    def to_records(self) -> List[dict]:
        """Report entries {p_global, p_3d, confidence, box, drop_reason?}, accepted first."""
        records = [_record(d) for d in self.detections]
        for drop in self.dropped:
            if drop.detection is not None:
                rec = _record(drop.detection)
            else:
                rec = {'p_global': None, 'p_3d': None, 'confidence': None,
                       'box': drop.box.to_dict()}
            rec['drop_reason'] = drop.drop_reason
            records.append(rec)
        return records


def _record(det: ScrewDetection) -> dict:
    return {'p_global': [float(c) for c in det.p_global],
            'p_3d': [float(c) for c in det.p_3d],
            'confidence': float(det.confidence),
            'box': det.box.to_dict()}


def split(img: RgbdImage) -> Tuple[RgbImage, DepthMap]:
    return img.rgb, img.depth


def normalize_illumination(gray: GrayImage) -> GrayImage:
    """Gamma-correct so the mean intensity moves to 0.5."""
    return gamma_correct(gray, auto_gamma(gray))


def stage1_coarse(rgb: RgbImage, model: FcnModel, params: DetectParams) -> List[BoundingBox]:
    """Candidate boxes from the recall model, grown to the analysis window."""
    pmap = forward(model, to_grayscale(rgb))
    mask = threshold(pmap, params.tau_coarse)
    boxes = connected_regions(mask, params.min_area, params.box_padding)
    return [expand_box(b, params.patch_size, rgb.shape) for b in boxes]


def clip_images(rgb: RgbImage, boxes: Sequence[BoundingBox]) -> List[Tuple[RgbImage, BoundingBox]]:
    patches = []
    for box in boxes:
        if not box.fits(rgb.shape):
            raise ValueError(f'{box} exceeds image of shape {rgb.shape}')
        patches.append((rgb[box.slices()].copy(), box))
    return patches


def central_disk(shape: Sequence[int], radius_fraction: float) -> BinaryMask:
    h, w = shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    r = radius_fraction * min(h, w)
    return (xx - (w - 1) / 2) ** 2 + (yy - (h - 1) / 2) ** 2 <= r * r


def stage2_verify(
        patch: RgbImage,
        ensemble: Sequence[FcnModel],
        params: DetectParams,
) -> Tuple[bool, BinaryMask]:
    """Accept the patch if enough averaged-ensemble positives sit near its center."""
    if not ensemble:
        raise ValueError('stage 2 needs at least one model')
    gray = normalize_illumination(to_grayscale(patch))
    h_avg = np.mean([forward(m, gray) for m in ensemble], axis=0)
    mask = threshold(h_avg, params.tau_fine)
    disk = central_disk(mask.shape, params.verify_radius)
    fraction = float(mask[disk].mean())
    logger.debug(f'stage 2: positive fraction {fraction:.3f} in the central disk')
    return fraction >= params.verify_fraction, mask


def _nominal_head(shape: Sequence[int], params: DetectParams) -> CircleFit:
    h, w = shape[:2]
    r = min(params.r_max, (min(h, w) - 1) / 2 - 1)
    return CircleFit(center=((w - 1) / 2, (h - 1) / 2), radius=float(r), score=0.0)


def estimate_center(patch: RgbImage, params: DetectParams = DetectParams()) -> Tuple[Point, float]:
    """Fused sub-pixel recess center of the screw in patch, with a confidence.

    The cross centroid and the head circle center are blended with weight
    fuse_weight_cross; either cue alone is used when the other fails.
    """
    eq = equalize_hist(to_grayscale(patch))
    h, w = eq.shape
    r_max = min(params.r_max, int(np.ceil(min(h, w) / 2)) - 1)
    head: Optional[CircleFit] = None
    if r_max >= params.r_min:
        try:
            head = detect_outer_circle(eq, params.r_min, r_max)
        except NoCircle as e:
            logger.debug(f'circle fit failed: {e}')
    try:
        cross = detect_cross_center(eq, head or _nominal_head(eq.shape, params),
                                    margin=params.cross_margin)
    except NoCross as e:
        logger.debug(f'cross fit failed: {e}')
        cross = None

    wc = params.fuse_weight_cross
    if head is not None and cross is not None:
        p = (wc * cross.center[0] + (1 - wc) * head.center[0],
             wc * cross.center[1] + (1 - wc) * head.center[1])
        return p, float(wc * cross.score + (1 - wc) * head.score)
    if head is not None:
        return head.center, float((1 - wc) * head.score)
    if cross is not None:
        return cross.center, float(wc * cross.score)
    raise NoCenter('neither a head circle nor a cross recess was found')


def map_to_global(p_local: Point, box: BoundingBox) -> Point:
    return (float(p_local[0] + box.x), float(p_local[1] + box.y))


def get_3d(
        p_global: Point,
        depth: DepthMap,
        intr: CameraIntrinsics,
        window: int,
) -> Tuple[float, float, float]:
    """Back-project p_global at the median valid depth of a window around it."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f'window must be odd and >= 1, got {window}')
    h, w = depth.shape
    ix = int(round(p_global[0]))
    iy = int(round(p_global[1]))
    if not (0 <= ix < w and 0 <= iy < h):
        raise NoDepth(f'{p_global} lies outside the {w}x{h} depth map')
    k = window // 2
    vals = depth[max(iy - k, 0):iy + k + 1, max(ix - k, 0):ix + k + 1]
    vals = vals[np.isfinite(vals) & (vals > 0)]
    if vals.size == 0:
        raise NoDepth(f'no valid depth around {p_global}')
    z = float(np.median(vals))
    p = pinhole_back_project(intr, np.asarray(p_global, dtype=float), z)
    return (float(p[0]), float(p[1]), float(p[2]))


def _merge(detections: List[ScrewDetection], radius: float) -> List[ScrewDetection]:
    kept: List[ScrewDetection] = []
    for det in sorted(detections, key=lambda d: -d.confidence):
        if all(np.hypot(det.p_global[0] - k.p_global[0], det.p_global[1] - k.p_global[1]) > radius
               for k in kept):
            kept.append(det)
    return sorted(kept, key=lambda d: (d.p_global[1], d.p_global[0]))


def run_detection(
        img: RgbdImage,
        recall_model: FcnModel,
        ensemble: Sequence[FcnModel],
        intr: CameraIntrinsics,
        params: DetectParams = DetectParams(),
) -> DetectionResult:
    """detect_screws with the stage-1 candidates and per-candidate drop reasons."""
    rgb, depth = split(img)
    boxes = stage1_coarse(rgb, recall_model, params)
    detections = []
    dropped = []
    for patch, box in clip_images(rgb, boxes):
        accepted, _ = stage2_verify(patch, ensemble, params)
        if not accepted:
            dropped.append(DroppedCandidate(box, 'rejected'))
            continue
        try:
            p_local, confidence = estimate_center(patch, params)
            p_global = map_to_global(p_local, box)
            p_3d = get_3d(p_global, depth, intr, params.depth_window)
        except (NoCenter, NoDepth) as e:
            logger.warning(f'dropping candidate at {box}: {e}')
            dropped.append(DroppedCandidate(box, type(e).__name__))
            continue
        detections.append(ScrewDetection(p_global, p_3d, confidence, box))
    merged = _merge(detections, params.merge_radius)
    for det in detections:
        if det not in merged:
            dropped.append(DroppedCandidate(det.box, 'duplicate', det))
    return DetectionResult(detections=merged, candidates=boxes, dropped=dropped)


def detect_screws(
        img: RgbdImage,
        recall_model: FcnModel,
        ensemble: Sequence[FcnModel],
        intr: CameraIntrinsics,
        params: DetectParams = DetectParams(),
) -> List[ScrewDetection]:
    """Screw centers in image and camera coordinates, row-major by p_global."""
    return run_detection(img, recall_model, ensemble, intr, params).detections


def mm_per_pixel(intr: CameraIntrinsics, depth: float) -> float:
    return depth / intr.fx
