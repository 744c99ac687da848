"""Synthetic panel scenes: cross-recess screws, confusers and depth.

Scenes are rendered straight into a sensor window. Screws and confusers are
positioned in panel millimetres, measured from the camera point that images
onto the window's top-left pixel at panel depth. Every drawing primitive is
anti-aliased over one pixel so ground-truth centers are sub-pixel exact.
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, field, replace, asdict
from scipy import ndimage
from typing import List, Literal, Optional, Sequence, Tuple
from scrloc.models.fcn.network import LabeledPatch
from scrloc.synth.camera import CameraIntrinsics, project
from scrloc.synth.world import TrueWorldModel
from scrloc.tools.imgproc import RgbImage, to_grayscale


PANEL_RGB = np.array([0.50, 0.50, 0.48])
HEAD_RGB = np.array([0.80, 0.80, 0.82])
RIM_RGB = np.array([0.22, 0.22, 0.22])
RECESS_RGB = np.array([0.10, 0.10, 0.10])
DIRT_RGB = np.array([0.56, 0.50, 0.42])
RUST_RGB = np.array([0.55, 0.30, 0.15])
SMEAR_RGB = np.array([0.88, 0.87, 0.84])
RIVET_RGB = np.array([0.82, 0.82, 0.84])
HOLE_RGB = np.array([0.08, 0.08, 0.08])
STAIN_RGB = np.array([0.40, 0.33, 0.25])

SCREW_RELIEF_MM = 5.0
RIVET_RELIEF_MM = 3.0
HOLE_DEPTH_MM = 8.0
RIM_WIDTH_PX = 1.5
HEAD_SHADING = 0.06
ARM_LENGTH = 0.6        # of head radius
ARM_HALF_WIDTH = 0.12   # of head radius
LABEL_RADIUS = 0.6      # of head radius
PATCH_SIZE = 34
SCENE_CELL_PX = 50

ConfuserKind = Literal['rivet', 'hole', 'stain']
NegativeKind = Literal['plain', 'rivet', 'hole', 'stain', 'edge']
NEGATIVE_KINDS = ('plain', 'rivet', 'hole', 'stain', 'edge')


@dataclass(frozen=True)
class Degradation:
    rust_level: float = 0.0
    dirt_level: float = 0.0
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (0.0 <= value <= 1.0):
                raise ValueError(f'{name} must lie in [0, 1], got {value}')


@dataclass(frozen=True)
class Envelope:
    """Operating envelope a screw must satisfy to count as in-spec."""

    max_rotation_deg: float = 4.0
    max_tilt_deg: float = 6.0
    max_rust: float = 0.4
    max_dirt: float = 0.4
    max_occlusion: float = 0.25
    max_recess_offset_mm: float = 0.2


DEFAULT_ENVELOPE = Envelope()


@dataclass(frozen=True)
class ScrewSpec:
    center: Tuple[float, float] = (0.0, 0.0)   # panel mm, x right / y down
    head_radius: float = 2.2                    # mm
    rotation_deg: float = 0.0
    tilt_deg: float = 0.0
    tilt_axis_deg: float = 0.0
    degradation: Degradation = Degradation()
    recess_offset_mm: Tuple[float, float] = (0.0, 0.0)
    occlusion_angle_deg: float = 0.0

    def __post_init__(self):
        if self.head_radius <= 0:
            raise ValueError(f'head_radius must be positive, got {self.head_radius}')

    def within_spec(self, envelope: Envelope = DEFAULT_ENVELOPE) -> bool:
        d = self.degradation
        return (abs(self.rotation_deg) <= envelope.max_rotation_deg
                and abs(self.tilt_deg) <= envelope.max_tilt_deg
                and d.rust_level <= envelope.max_rust
                and d.dirt_level <= envelope.max_dirt
                and d.occlusion_fraction <= envelope.max_occlusion
                and float(np.hypot(*self.recess_offset_mm)) <= envelope.max_recess_offset_mm)


@dataclass(frozen=True)
class ConfuserSpec:
    kind: ConfuserKind
    center: Tuple[float, float]
    radius: float   # mm


@dataclass(frozen=True)
class SceneSpec:
    """One panel view. Image size in pixels; origin is the sensor pixel of
    the top-left corner (centered on the principal point when None)."""

    width: int = 360
    height: int = 300
    panel_depth: float = 1500.0
    screws: Tuple[ScrewSpec, ...] = ()
    confusers: Tuple[ConfuserSpec, ...] = ()
    illumination: Tuple[float, float] = (0.0, 0.0)
    exposure: float = 1.0
    texture: float = 0.03
    noise: float = 0.01
    depth_noise: Optional[float] = None
    origin: Optional[Tuple[int, int]] = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f'scene size must be positive, got {self.width}x{self.height}')
        for i, a in enumerate(self.screws):
            for b in self.screws[i + 1:]:
                gap = np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
                if gap < a.head_radius + b.head_radius:
                    raise ValueError(f'screws at {a.center} and {b.center} overlap')


@dataclass(frozen=True)
class ScrewTruth:
    pixel: Tuple[float, float]               # recess center, scene pixels
    camera: Tuple[float, float, float]       # recess center, true camera mm
    head_pixel: Tuple[float, float]
    radius_px: float
    in_spec: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RenderedScene:
    rgb: RgbImage
    depth: npt.NDArray
    truth: List[ScrewTruth]
    intrinsics: CameraIntrinsics
    origin: Tuple[int, int]
    confuser_pixels: List[Tuple[float, float]] = field(default_factory=list)


def _coverage(inside: npt.NDArray) -> npt.NDArray:
    """Anti-aliased coverage from a signed distance in pixels (positive inside)."""
    return np.clip(inside + 0.5, 0.0, 1.0)


def _blend(rgb, color, alpha):
    alpha = alpha[..., None]
    rgb *= 1.0 - alpha
    rgb += alpha * color


def _pose_inverse(rotation_deg, tilt_deg, tilt_axis_deg):
    """Inverse of the image-plane map (rotation after tilt foreshortening)."""
    th = np.deg2rad(rotation_deg)
    ph = np.deg2rad(tilt_axis_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    axis = np.array([[np.cos(ph), -np.sin(ph)], [np.sin(ph), np.cos(ph)]])
    squash = axis @ np.diag([np.cos(np.deg2rad(tilt_deg)), 1.0]) @ axis.T
    return np.linalg.inv(rot @ squash)


class _Canvas:
    """Scene window with the panel-to-pixel mapping."""

    def __init__(self, spec: SceneSpec, intr: CameraIntrinsics):
        self.spec = spec
        if spec.origin is None:
            origin = (int(round(intr.cx - spec.width / 2)), int(round(intr.cy - spec.height / 2)))
        else:
            origin = tuple(int(o) for o in spec.origin)
        self.origin = origin
        self.intr = intr
        self.local = intr.crop(origin[0], origin[1], spec.width, spec.height)
        z = spec.panel_depth
        self.x0 = (origin[0] - intr.cx) * z / intr.fx
        self.y0 = (origin[1] - intr.cy) * z / intr.fy
        self.rgb = np.empty((spec.height, spec.width, 3))
        self.depth = np.full((spec.height, spec.width), z)

    def camera_point(self, panel_xy, relief=0.0) -> npt.NDArray:
        return np.array([self.x0 + panel_xy[0], self.y0 + panel_xy[1],
                         self.spec.panel_depth - relief])

    def pixel(self, point) -> npt.NDArray:
        return project(self.local, point)

    def radius_px(self, radius_mm, relief=0.0) -> float:
        return radius_mm * self.intr.fx / (self.spec.panel_depth - relief)

    def window(self, center, reach):
        """Slices and pixel grids covering a square of half-size reach."""
        h, w = self.depth.shape
        x_lo = max(int(np.floor(center[0] - reach)), 0)
        x_hi = min(int(np.ceil(center[0] + reach)) + 1, w)
        y_lo = max(int(np.floor(center[1] - reach)), 0)
        y_hi = min(int(np.ceil(center[1] + reach)) + 1, h)
        if x_lo >= x_hi or y_lo >= y_hi:
            return None
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi].astype(float)
        return (slice(y_lo, y_hi), slice(x_lo, x_hi)), xx, yy


def _draw_screw(canvas: _Canvas, screw: ScrewSpec, rng: np.random.Generator) -> ScrewTruth:
    head_pt = canvas.camera_point(screw.center, SCREW_RELIEF_MM)
    recess_xy = (screw.center[0] + screw.recess_offset_mm[0],
                 screw.center[1] + screw.recess_offset_mm[1])
    recess_pt = canvas.camera_point(recess_xy, SCREW_RELIEF_MM)
    head_px = canvas.pixel(head_pt)
    recess_px = canvas.pixel(recess_pt)
    r = canvas.radius_px(screw.head_radius, SCREW_RELIEF_MM)
    truth = ScrewTruth(
        pixel=(float(recess_px[0]), float(recess_px[1])),
        camera=tuple(float(c) for c in recess_pt),
        head_pixel=(float(head_px[0]), float(head_px[1])),
        radius_px=float(r),
        in_spec=screw.within_spec(),
    )
    win = canvas.window(head_px, r + RIM_WIDTH_PX + 2)
    if win is None:
        return truth
    sl, xx, yy = win
    inv = _pose_inverse(screw.rotation_deg, screw.tilt_deg, screw.tilt_axis_deg)

    def local(center):
        dx = xx - center[0]
        dy = yy - center[1]
        return inv[0, 0] * dx + inv[0, 1] * dy, inv[1, 0] * dx + inv[1, 1] * dy

    hx, hy = local(head_px)
    rho = np.hypot(hx, hy)
    rgb = canvas.rgb[sl]
    _blend(rgb, RIM_RGB, _coverage(r + RIM_WIDTH_PX - rho))
    head = _coverage(r - rho)
    shading = 1.0 - HEAD_SHADING * np.clip(rho / r, 0.0, 1.0) ** 2
    rgb *= 1.0 - head[..., None]
    rgb += head[..., None] * HEAD_RGB * shading[..., None]

    d = screw.degradation
    if d.rust_level > 0:
        blot = ndimage.gaussian_filter(rng.normal(size=head.shape), 2.0)
        blot = (blot - blot.mean()) / (blot.std() + 1e-12)
        _blend(rgb, RUST_RGB, d.rust_level * np.clip(0.5 + blot, 0.0, 1.0) * head)

    rx, ry = local(recess_px)
    arm = ARM_LENGTH * r
    half = ARM_HALF_WIDTH * r
    bar_a = _coverage(arm - np.abs(rx)) * _coverage(half - np.abs(ry))
    bar_b = _coverage(arm - np.abs(ry)) * _coverage(half - np.abs(rx))
    recess_color = (1.0 - d.dirt_level) * RECESS_RGB + d.dirt_level * DIRT_RGB
    _blend(rgb, recess_color, np.maximum(bar_a, bar_b) * head)

    if d.occlusion_fraction > 0:
        # Chord at signed distance c covers the given share of the disk.
        c = r * _chord_offset(d.occlusion_fraction)
        ang = np.deg2rad(screw.occlusion_angle_deg)
        s = hx * np.cos(ang) + hy * np.sin(ang)
        _blend(rgb, SMEAR_RGB, _coverage(s - c) * _coverage(r + RIM_WIDTH_PX + 1 - rho))

    canvas.depth[sl] -= SCREW_RELIEF_MM * head
    return truth


def _chord_offset(fraction: float) -> float:
    """Normalized offset of the chord cutting off `fraction` of a unit disk."""
    if fraction >= 1.0:
        return -1.0
    lo, hi = -1.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        share = (np.arccos(mid) - mid * np.sqrt(1 - mid * mid)) / np.pi
        if share > fraction:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _draw_confuser(canvas: _Canvas, conf: ConfuserSpec) -> Tuple[float, float]:
    relief = RIVET_RELIEF_MM if conf.kind == 'rivet' else 0.0
    center = canvas.pixel(canvas.camera_point(conf.center, relief))
    r = canvas.radius_px(conf.radius, relief)
    reach = 2.5 * r if conf.kind == 'stain' else r + RIM_WIDTH_PX + 2
    win = canvas.window(center, reach)
    if win is None:
        return float(center[0]), float(center[1])
    sl, xx, yy = win
    rho = np.hypot(xx - center[0], yy - center[1])
    rgb = canvas.rgb[sl]
    if conf.kind == 'rivet':
        _blend(rgb, RIM_RGB, _coverage(r + RIM_WIDTH_PX - rho))
        dome = _coverage(r - rho)
        highlight = 1.0 + 0.1 * (1.0 - np.clip(rho / r, 0.0, 1.0) ** 2)
        rgb *= 1.0 - dome[..., None]
        rgb += dome[..., None] * np.clip(RIVET_RGB * highlight[..., None], 0.0, 1.0)
        canvas.depth[sl] -= RIVET_RELIEF_MM * dome
    elif conf.kind == 'hole':
        hole = _coverage(r - rho)
        _blend(rgb, HOLE_RGB, hole)
        canvas.depth[sl] += HOLE_DEPTH_MM * hole
    elif conf.kind == 'stain':
        _blend(rgb, STAIN_RGB, 0.5 * np.exp(-0.5 * (rho / r) ** 2))
    else:
        raise ValueError(f'unknown confuser kind {conf.kind!r}')
    return float(center[0]), float(center[1])


def render_scene(spec: SceneSpec, world: TrueWorldModel) -> RenderedScene:
    """Render spec through the world's camera with its depth noise.

    The scene seed fixes texture, degradation blots and noise bit-exactly.
    """
    return _render(spec, world.intrinsics, world.params.depth_noise)


def _render(
        spec: SceneSpec,
        intrinsics: CameraIntrinsics,
        depth_noise: float = 0.0,
) -> RenderedScene:
    rng = np.random.default_rng(spec.seed)
    canvas = _Canvas(spec, intrinsics)
    h, w = spec.height, spec.width
    tex = rng.normal(size=(h, w))
    if spec.texture > 0:
        tex = ndimage.gaussian_filter(tex, 2.0)
        tex *= spec.texture / (tex.std() + 1e-12)
    else:
        tex = np.zeros((h, w))
    canvas.rgb[:] = PANEL_RGB * (1.0 + tex)[..., None]

    confuser_px = []
    for conf in sorted(spec.confusers, key=lambda c: c.kind != 'stain'):
        confuser_px.append(_draw_confuser(canvas, conf))
    truth = [_draw_screw(canvas, screw, rng) for screw in spec.screws]

    yy, xx = np.mgrid[0:h, 0:w]
    gx, gy = spec.illumination
    light = spec.exposure * (1.0 + gx * (xx / w - 0.5) + gy * (yy / h - 0.5))
    rgb = canvas.rgb * light[..., None]
    if spec.noise > 0:
        rgb += rng.normal(0.0, spec.noise, size=rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)

    depth = canvas.depth
    sigma = depth_noise if spec.depth_noise is None else spec.depth_noise
    if sigma > 0:
        depth = depth + rng.normal(0.0, sigma, size=depth.shape)
    return RenderedScene(rgb=rgb, depth=depth, truth=truth, intrinsics=canvas.local,
                         origin=canvas.origin, confuser_pixels=confuser_px)


def random_screw_spec(
        rng: np.random.Generator,
        center: Tuple[float, float] = (0.0, 0.0),
        in_spec: bool = True,
        envelope: Envelope = DEFAULT_ENVELOPE,
) -> ScrewSpec:
    """Draw a screw inside the envelope, or one that violates it."""
    occlusion = rng.uniform(0.0, envelope.max_occlusion) if rng.uniform() < 0.3 else 0.0
    degradation = Degradation(
        rust_level=rng.uniform(0.0, envelope.max_rust),
        dirt_level=rng.uniform(0.0, envelope.max_dirt),
        occlusion_fraction=occlusion,
    )
    offset_r = rng.uniform(0.0, envelope.max_recess_offset_mm)
    offset_a = rng.uniform(0.0, 2 * np.pi)
    spec = ScrewSpec(
        center=center,
        head_radius=rng.uniform(2.0, 2.4),
        rotation_deg=rng.uniform(-envelope.max_rotation_deg, envelope.max_rotation_deg),
        tilt_deg=rng.uniform(-envelope.max_tilt_deg, envelope.max_tilt_deg),
        tilt_axis_deg=rng.uniform(0.0, 180.0),
        degradation=degradation,
        recess_offset_mm=(offset_r * np.cos(offset_a), offset_r * np.sin(offset_a)),
        occlusion_angle_deg=rng.uniform(0.0, 360.0),
    )
    if in_spec:
        return spec
    violation = rng.integers(3)
    if violation == 0:
        return replace(spec, tilt_deg=float(rng.choice([-1, 1]) * rng.uniform(10.0, 20.0)))
    if violation == 1:
        return replace(spec, degradation=replace(degradation,
                                                 occlusion_fraction=rng.uniform(0.5, 0.95)))
    return replace(spec, degradation=replace(degradation, rust_level=rng.uniform(0.6, 1.0)))


def random_confuser_spec(
        rng: np.random.Generator,
        center: Tuple[float, float],
        kind: Optional[ConfuserKind] = None,
) -> ConfuserSpec:
    if kind is None:
        kind = rng.choice(['rivet', 'hole', 'stain'], p=[0.5, 0.25, 0.25])
    if kind == 'rivet':
        radius = rng.uniform(1.9, 2.5)
    elif kind == 'hole':
        radius = rng.uniform(1.0, 2.0)
    else:
        radius = rng.uniform(2.0, 4.0)
    return ConfuserSpec(kind=str(kind), center=center, radius=float(radius))


def random_scene_spec(
        rng: np.random.Generator,
        n_screws: int,
        n_confusers: int = 0,
        width: int = 360,
        height: int = 300,
        panel_depth: float = 1500.0,
        in_spec: bool = True,
        intrinsics: CameraIntrinsics = CameraIntrinsics(),
        envelope: Envelope = DEFAULT_ENVELOPE,
) -> SceneSpec:
    """Scatter screws and confusers over a grid of cells, one object per cell."""
    nx, ny = width // SCENE_CELL_PX, height // SCENE_CELL_PX
    n = n_screws + n_confusers
    if n > nx * ny:
        raise ValueError(f'{n} objects do not fit a {width}x{height} scene')
    mm_per_px = panel_depth / intrinsics.fx
    margin_x = (width - nx * SCENE_CELL_PX) / 2
    margin_y = (height - ny * SCENE_CELL_PX) / 2
    jitter = SCENE_CELL_PX / 2 - 16
    cells = rng.choice(nx * ny, size=n, replace=False)
    centers = []
    for cell in cells:
        cx = margin_x + (cell % nx + 0.5) * SCENE_CELL_PX + rng.uniform(-jitter, jitter)
        cy = margin_y + (cell // nx + 0.5) * SCENE_CELL_PX + rng.uniform(-jitter, jitter)
        centers.append((cx * mm_per_px, cy * mm_per_px))
    screws = tuple(random_screw_spec(rng, c, in_spec, envelope) for c in centers[:n_screws])
    confusers = tuple(random_confuser_spec(rng, c) for c in centers[n_screws:])
    return SceneSpec(
        width=width,
        height=height,
        panel_depth=panel_depth,
        screws=screws,
        confusers=confusers,
        illumination=tuple(rng.uniform(-0.2, 0.2, size=2)),
        exposure=float(rng.uniform(0.8, 1.15)),
        seed=int(rng.integers(2 ** 31)),
    )


def label_mask(shape: Sequence[int], truth: Sequence[ScrewTruth]) -> npt.NDArray:
    """Screw-class pixels: disks of LABEL_RADIUS head radii around each recess."""
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    mask = np.zeros(shape[:2], dtype=bool)
    for t in truth:
        rad = LABEL_RADIUS * t.radius_px
        mask |= (xx - t.pixel[0]) ** 2 + (yy - t.pixel[1]) ** 2 <= rad ** 2
    return mask


def render_patch(
        spec: ScrewSpec,
        positive: bool,
        seed: int,
        size: int = PATCH_SIZE,
        panel_depth: float = 1500.0,
        negative_kind: Optional[NegativeKind] = None,
        intrinsics: CameraIntrinsics = CameraIntrinsics(),
) -> LabeledPatch:
    """Training patch: a screw near the center (positive) or a confuser,
    plain panel or a screw whose label lies outside the patch (negative)."""
    rng = np.random.default_rng(seed)
    mm_per_px = panel_depth / intrinsics.fx
    mid = (size - 1) / 2 * mm_per_px
    jitter = rng.uniform(-2.0, 2.0, size=2) * mm_per_px
    screws, confusers = (), ()
    if positive:
        screws = (replace(spec, center=(mid + jitter[0], mid + jitter[1])),)
    else:
        kind = negative_kind or rng.choice(NEGATIVE_KINDS, p=[0.2, 0.35, 0.15, 0.15, 0.15])
        center = (mid + jitter[0], mid + jitter[1])
        if kind == 'edge':
            # Head partly inside, label disk fully outside.
            r_px = spec.head_radius / mm_per_px
            dist = size / 2 + LABEL_RADIUS * r_px + rng.uniform(1.0, 0.5 * r_px)
            side = rng.uniform(-3.0, 3.0)
            along, across = (dist, side) if rng.uniform() < 0.5 else (side, dist)
            sign = rng.choice([-1.0, 1.0], size=2)
            center = (mid + sign[0] * along * mm_per_px, mid + sign[1] * across * mm_per_px)
            screws = (replace(spec, center=center),)
        elif kind != 'plain':
            confusers = (random_confuser_spec(rng, center, kind),)
    scene = SceneSpec(
        width=size,
        height=size,
        panel_depth=panel_depth,
        screws=screws,
        confusers=confusers,
        illumination=tuple(rng.uniform(-0.2, 0.2, size=2)),
        exposure=float(rng.uniform(0.8, 1.15)),
        seed=int(rng.integers(2 ** 31)),
    )
    rendered = _render(scene, intrinsics)
    if positive:
        label = label_mask((size, size), rendered.truth)
    else:
        label = np.zeros((size, size), dtype=bool)
    return LabeledPatch(image=to_grayscale(rendered.rgb), label=label)
