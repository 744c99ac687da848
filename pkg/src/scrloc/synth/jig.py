"""Simulated captures of the calibration paddle.

The paddle is a gray plate held perpendicular to the optical axis with one
red circular marker whose center sits at the commanded robot node. Each
capture renders only a window of the sensor around the marker.
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass
from scipy.special import erfc
from typing import Literal, Optional
from scrloc.synth.camera import CameraIntrinsics, pinhole_project
from scrloc.synth.world import TrueWorldModel


MARKER_RADIUS_MM = 6.0
MARKER_BLUR_PX = 1.5
PLATE_RGB = np.array([0.6, 0.6, 0.6])
MARKER_RGB = np.array([1.0, 0.0, 0.0])
MARKER_COLOR_WINDOW = ((0.8, 1.0), (0.0, 0.3), (0.0, 0.3))
# Blur support plus room for the centroid window.
ROI_MARGIN_PX = 24
DOUBLE_OFFSET_RADII = 3.0

JigFault = Optional[Literal['occluded', 'double']]


@dataclass
class JigCapture:
    rgb: npt.NDArray
    depth: npt.NDArray
    origin: tuple       # sensor (x, y) of rgb[0, 0]
    marker_px: tuple    # rendered marker center, sensor pixels
    radius_px: float

    def intrinsics(self, sensor: CameraIntrinsics) -> CameraIntrinsics:
        h, w = self.depth.shape
        return sensor.crop(self.origin[0], self.origin[1], w, h)


def _disk(xx, yy, cx, cy, radius, blur):
    d = np.hypot(xx - cx, yy - cy)
    return 0.5 * erfc((d - radius) / (np.sqrt(2.0) * blur))


def simulate_jig_capture(
        world: TrueWorldModel,
        robot_node: npt.ArrayLike,
        fault: JigFault = None,
        rng: np.random.Generator = None,
) -> JigCapture:
    """Render the marker at the measured-camera image of robot_node.

    fault='occluded' hides the marker; fault='double' adds a second marker
    beside the first.
    """
    if fault not in (None, 'occluded', 'double'):
        raise ValueError(f'unknown jig fault {fault!r}')
    intr = world.intrinsics
    p_cam = world.inverse_map(robot_node)
    z = float(p_cam[2])
    u, v = pinhole_project(intr, p_cam)
    r_px = MARKER_RADIUS_MM * intr.fx / z

    half = int(np.ceil(r_px)) + ROI_MARGIN_PX
    extra = int(np.ceil(DOUBLE_OFFSET_RADII * r_px)) if fault == 'double' else 0
    x0 = int(np.floor(u)) - half
    y0 = int(np.floor(v)) - half
    w = 2 * half + 1 + extra
    h = 2 * half + 1

    # Local coordinates keep the centroid sums well away from large offsets.
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    cu, cv = u - x0, v - y0
    alpha = np.zeros((h, w))
    if fault != 'occluded':
        alpha += _disk(xx, yy, cu, cv, r_px, MARKER_BLUR_PX)
    if fault == 'double':
        alpha += _disk(xx, yy, cu + DOUBLE_OFFSET_RADII * r_px, cv, r_px, MARKER_BLUR_PX)
    alpha = np.clip(alpha, 0.0, 1.0)[..., None]
    rgb = PLATE_RGB * (1.0 - alpha) + MARKER_RGB * alpha

    depth = np.full((h, w), z)
    sigma = world.params.depth_noise
    if sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        depth = depth + rng.normal(0.0, sigma, size=depth.shape)
    return JigCapture(rgb=rgb, depth=depth, origin=(x0, y0), marker_px=(float(u), float(v)),
                      radius_px=float(r_px))
