"""Pinhole camera with two-term radial distortion.

``project`` maps camera-frame points (mm) to distorted pixels; the inverse
``back_project`` undistorts by fixed-point iteration. The ``pinhole_*``
variants skip distortion; they define the *measured* camera coordinates the
detection pipeline produces, whose residual distortion the calibration
lattice absorbs.
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, asdict, replace
from scrloc.errors import NoConvergence


MAX_UNDISTORT_ITER = 20
UNDISTORT_TOL_PX = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths and principal point in pixels, k1/k2 dimensionless."""

    fx: float = 7500.0
    fy: float = 7500.0
    cx: float = 2600.0
    cy: float = 1800.0
    k1: float = -0.0053
    k2: float = 0.0
    width: int = 5200
    height: int = 3600

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f'focal lengths must be positive, got {self.fx}, {self.fy}')

    def crop(self, x0: int, y0: int, width: int, height: int) -> 'CameraIntrinsics':
        """Intrinsics of a sensor window whose top-left pixel is (x0, y0)."""
        return replace(self, cx=self.cx - x0, cy=self.cy - y0, width=width, height=height)

    def mm_per_pixel(self, depth: float) -> float:
        return depth / self.fx

    def to_dict(self) -> dict:
        return asdict(self)


def distort_normalized(xn: npt.NDArray, yn: npt.NDArray, k1: float, k2: float):
    r2 = xn * xn + yn * yn
    f = 1.0 + k1 * r2 + k2 * r2 * r2
    return xn * f, yn * f


def undistort_normalized(
        xd: npt.NDArray,
        yd: npt.NDArray,
        intr: CameraIntrinsics,
        max_iter: int = MAX_UNDISTORT_ITER,
        tol_px: float = UNDISTORT_TOL_PX,
):
    """Invert the radial model by fixed-point iteration x <- xd / f(r(x))."""
    xd = np.asarray(xd, dtype=float)
    yd = np.asarray(yd, dtype=float)
    x = xd.copy()
    y = yd.copy()
    tol = tol_px / max(intr.fx, intr.fy)
    for _ in range(max_iter):
        r2 = x * x + y * y
        f = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
        if np.any(f <= 0):
            raise NoConvergence('point outside the invertible distortion radius')
        x_new = xd / f
        y_new = yd / f
        step = np.max(np.abs(np.concatenate([np.ravel(x_new - x), np.ravel(y_new - y)])))
        x, y = x_new, y_new
        if step <= tol:
            return x, y
    raise NoConvergence(f'undistortion did not converge in {max_iter} iterations')


def project(intr: CameraIntrinsics, points: npt.ArrayLike) -> npt.NDArray:
    """Camera-frame points (..., 3) in mm to distorted pixels (..., 2)."""
    p = np.asarray(points, dtype=float)
    if np.any(p[..., 2] <= 0):
        raise ValueError('points must lie in front of the camera')
    xd, yd = distort_normalized(p[..., 0] / p[..., 2], p[..., 1] / p[..., 2], intr.k1, intr.k2)
    return np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)


def back_project(
        intr: CameraIntrinsics,
        pixels: npt.ArrayLike,
        depth: npt.ArrayLike,
) -> npt.NDArray:
    """Distorted pixels (..., 2) plus depth along the optical axis to points (..., 3)."""
    uv = np.asarray(pixels, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(z <= 0):
        raise ValueError('depth must be positive')
    xd = (uv[..., 0] - intr.cx) / intr.fx
    yd = (uv[..., 1] - intr.cy) / intr.fy
    xn, yn = undistort_normalized(xd, yd, intr)
    return np.stack([xn * z, yn * z, z * np.ones_like(xn)], axis=-1)


def pinhole_project(intr: CameraIntrinsics, points: npt.ArrayLike) -> npt.NDArray:
    p = np.asarray(points, dtype=float)
    return np.stack([
        intr.fx * p[..., 0] / p[..., 2] + intr.cx,
        intr.fy * p[..., 1] / p[..., 2] + intr.cy,
    ], axis=-1)


def pinhole_back_project(
        intr: CameraIntrinsics,
        pixels: npt.ArrayLike,
        depth: npt.ArrayLike,
) -> npt.NDArray:
    uv = np.asarray(pixels, dtype=float)
    z = np.asarray(depth, dtype=float)
    x = (uv[..., 0] - intr.cx) * z / intr.fx
    y = (uv[..., 1] - intr.cy) * z / intr.fy
    return np.stack([x, y, z * np.ones_like(x)], axis=-1)


def measure(intr: CameraIntrinsics, points: npt.ArrayLike) -> npt.NDArray:
    """Measured camera coordinates of true points: pinhole back-projection of
    their distorted image at the true depth."""
    p = np.asarray(points, dtype=float)
    return pinhole_back_project(intr, project(intr, p), p[..., 2])


def unmeasure(intr: CameraIntrinsics, measured: npt.ArrayLike) -> npt.NDArray:
    """Inverse of ``measure``."""
    m = np.asarray(measured, dtype=float)
    return back_project(intr, pinhole_project(intr, m), m[..., 2])
