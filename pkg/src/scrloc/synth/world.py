"""Ground-truth camera-to-robot map of the simulated cell.

A *measured* camera point (pinhole back-projection of a distorted pixel, the
coordinates the detection pipeline produces) is carried to the robot frame by

    p_robot = y + d(y),   y = M @ undistort(p_measured) + t

where ``M`` is a near-flip rotation with a small scale/skew error and ``d`` is
a smooth structural deflection field (a few sinusoids per robot axis).
"""
import numpy as np
import numpy.typing as npt
from dataclasses import dataclass, asdict, field
from typing import Tuple
from scrloc.logging import get_logger
from scrloc.synth.camera import CameraIntrinsics, measure, unmeasure
from scrloc.utils import derive_rng, digest_json


logger = get_logger('synth')

# Camera looks down at the cell: camera x ~ robot x, camera y ~ -robot y,
# depth grows as robot z falls.
BASE_ORIENTATION = np.diag([1.0, -1.0, -1.0])
DEFLECTION_AMPLITUDES = (0.8, 0.5, 0.2)
DEFLECTION_PERIODS = (900.0, 700.0, 600.0)
MAX_INVERSE_ITER = 100


@dataclass(frozen=True)
class WorldParams:
    """Parameters of a simulated cell. Lengths in mm."""

    working_distance: float = 1500.0
    depth_noise: float = 0.281
    distortion_k1: float = -0.0053
    distortion_k2: float = 0.0
    # Peak per-axis deflection; split over the sinusoids as 0.8/0.5/0.2 of 1.5.
    deflection_amplitude: float = 1.5
    rotation_deg: float = 0.5
    affine_error: float = 2e-3
    robot_center: Tuple[float, float, float] = (450.0, 200.0, 375.0)
    center_depth: float = 1775.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_noise < 0:
            raise ValueError(f'depth_noise must be >= 0, got {self.depth_noise}')
        if self.deflection_amplitude < 0:
            raise ValueError(
                f'deflection_amplitude must be >= 0, got {self.deflection_amplitude}'
            )
        if self.working_distance <= 0 or self.center_depth <= 0:
            raise ValueError('working_distance and center_depth must be positive')

    @classmethod
    def affine_only(cls, **kwargs) -> 'WorldParams':
        """A cell without distortion, deflection or depth noise."""
        base = dict(depth_noise=0.0, distortion_k1=0.0, distortion_k2=0.0,
                    deflection_amplitude=0.0)
        base.update(kwargs)
        return cls(**base)


def _rotation(axis: npt.NDArray, angle: float) -> npt.NDArray:
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


@dataclass
class TrueWorldModel:
    params: WorldParams
    intrinsics: CameraIntrinsics
    matrix: npt.NDArray
    translation: npt.NDArray
    # (3 axes, n terms): amplitude, unit direction (3,), phase
    amplitudes: npt.NDArray
    directions: npt.NDArray
    periods: npt.NDArray
    phases: npt.NDArray = field(repr=False)

    @classmethod
    def from_params(
            cls,
            params: WorldParams = WorldParams(),
            intrinsics: CameraIntrinsics = None,
    ) -> 'TrueWorldModel':
        if intrinsics is None:
            intrinsics = CameraIntrinsics(k1=params.distortion_k1, k2=params.distortion_k2)
        rng = derive_rng(params.seed, 1)
        rot = _rotation(rng.normal(size=3), np.deg2rad(params.rotation_deg))
        skew = rng.uniform(-params.affine_error, params.affine_error, size=(3, 3))
        matrix = rot @ BASE_ORIENTATION @ (np.eye(3) + skew)
        translation = (np.asarray(params.robot_center, dtype=float)
                       - matrix @ np.array([0.0, 0.0, params.center_depth]))

        n = len(DEFLECTION_AMPLITUDES)
        scale = params.deflection_amplitude / sum(DEFLECTION_AMPLITUDES)
        amplitudes = np.tile(np.array(DEFLECTION_AMPLITUDES) * scale, (3, 1))
        directions = rng.normal(size=(3, n, 3))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        periods = np.tile(np.array(DEFLECTION_PERIODS), (3, 1))
        phases = rng.uniform(0, 2 * np.pi, size=(3, n))
        world = cls(params, intrinsics, matrix, translation,
                    amplitudes, directions, periods, phases)
        logger.debug(f'built world with digest {world.digest()[:12]}')
        return world

    def deflection(self, y: npt.ArrayLike) -> npt.NDArray:
        """Deflection d(y) in mm at robot-frame points y (..., 3)."""
        y = np.asarray(y, dtype=float)
        arg = np.einsum('...k,ank->...an', y, self.directions)
        arg = 2 * np.pi * arg / self.periods + self.phases
        return np.sum(self.amplitudes * np.sin(arg), axis=-1)

    def deflection_curvature_bound(self) -> npt.NDArray:
        """Per-axis upper bound on |second directional derivative| of d (1/mm)."""
        return np.sum(self.amplitudes * (2 * np.pi / self.periods) ** 2, axis=-1)

    def true_robot_point(self, p_true: npt.ArrayLike) -> npt.NDArray:
        """Robot-frame position of a point given in true camera coordinates."""
        y = np.asarray(p_true, dtype=float) @ self.matrix.T + self.translation
        return y + self.deflection(y)

    def forward_map(self, p_camera: npt.ArrayLike) -> npt.NDArray:
        """Measured camera point(s) (..., 3) to true robot point(s)."""
        return self.true_robot_point(unmeasure(self.intrinsics, p_camera))

    def true_camera_point(self, p_robot: npt.ArrayLike) -> npt.NDArray:
        """Invert deflection then the affine part; returns true camera coordinates."""
        r = np.asarray(p_robot, dtype=float)
        y = r.copy()
        for _ in range(MAX_INVERSE_ITER):
            y_new = r - self.deflection(y)
            step = np.max(np.abs(y_new - y)) if y.size else 0.0
            y = y_new
            if step < 1e-12:
                break
        return (y - self.translation) @ np.linalg.inv(self.matrix).T

    def inverse_map(self, p_robot: npt.ArrayLike) -> npt.NDArray:
        """Robot point(s) to the measured camera point(s) a perfect sensor reports."""
        return measure(self.intrinsics, self.true_camera_point(p_robot))

    def to_dict(self) -> dict:
        return {'params': asdict(self.params), 'intrinsics': self.intrinsics.to_dict()}

    def digest(self) -> str:
        return digest_json(self.to_dict())
