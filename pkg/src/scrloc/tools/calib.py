"""Lattice hand-eye calibration.

A jig marker is driven to every node of a regular robot-frame lattice and
its camera coordinates are measured. Queries are mapped by a global affine
fit to a rough robot position, which selects the 3x3x3 block of lattice
nodes around it; a full quadratic fitted to those 27 pairs gives the final
robot coordinates, plus any per-node correction of the block center.
"""
import json
import numpy as np
import numpy.typing as npt
import pandas as pd
from dataclasses import dataclass, asdict, field
from itertools import product
from pathlib import Path
from tqdm import tqdm
from typing import Dict, Iterator, Literal, Optional, Sequence, Tuple, Union
from scrloc.errors import (
    AmbiguousMarker,
    DegenerateGeometry,
    IllConditioned,
    InvalidVolume,
    NoCompleteBlock,
    NoDepth,
    NoMarker,
    OutsideLattice,
    TooManyMissing,
)
from scrloc.logging import get_logger
from scrloc.synth.jig import MARKER_COLOR_WINDOW, JigFault, simulate_jig_capture
from scrloc.synth.world import TrueWorldModel
from scrloc.tools.detect import get_3d
from scrloc.tools.imgproc import find_marker_centroid
from scrloc.utils import derive_rng, digest_array


logger = get_logger('calib')

Index = Tuple[int, int, int]

MARKER_MIN_AREA = 200
MARKER_MAX_AREA = 20000
MARKER_SUPPORT_PX = 18
COND_BOUND = 1e10
SEARCH_RADIUS = 2


@dataclass(frozen=True)
class WorkVolume:
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    extents: Tuple[float, float, float] = (900.0, 400.0, 750.0)
    spacing: float = 50.0

    def __post_init__(self):
        if self.spacing <= 0:
            raise InvalidVolume(f'spacing must be positive, got {self.spacing}')
        if len(self.extents) != 3 or min(self.extents) <= 0:
            raise InvalidVolume(f'extents must be three positive lengths, got {self.extents}')
        for e in self.extents:
            ratio = e / self.spacing
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise InvalidVolume(f'spacing {self.spacing} does not divide extent {e}')

    @property
    def shape(self) -> Index:
        return tuple(int(round(e / self.spacing)) + 1 for e in self.extents)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def node(self, index: Sequence[int]) -> npt.NDArray:
        return np.asarray(self.origin, dtype=float) + self.spacing * np.asarray(index, dtype=float)


def generate_lattice(volume: WorkVolume) -> npt.NDArray:
    """Robot-frame nodes (n, 3), x index slowest, z fastest."""
    axes = [o + volume.spacing * np.arange(n) for o, n in zip(volume.origin, volume.shape)]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    return grid.reshape(-1, 3)


@dataclass(frozen=True)
class CorrespondencePair:
    camera_point: Tuple[float, float, float]
    robot_point: Tuple[float, float, float]
    lattice_index: Index


@dataclass
class GlobalLinearMap:
    """Camera-to-robot affine map [A | t] with its fit residuals (mm)."""

    matrix: npt.NDArray     # (3, 4)
    rms: float = 0.0
    max_error: float = 0.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (3, 4) or not np.all(np.isfinite(self.matrix)):
            raise DegenerateGeometry(f'invalid affine matrix {self.matrix}')
        if abs(np.linalg.det(self.matrix[:, :3])) < 1e-12:
            raise DegenerateGeometry('linear part of the global map is singular')

    def apply(self, p: npt.ArrayLike) -> npt.NDArray:
        p = np.asarray(p, dtype=float)
        return p @ self.matrix[:, :3].T + self.matrix[:, 3]

    def to_dict(self) -> dict:
        return {'matrix': self.matrix.tolist(), 'rms': self.rms, 'max_error': self.max_error}

    @classmethod
    def from_dict(cls, data: dict) -> 'GlobalLinearMap':
        return cls(np.array(data['matrix']), data.get('rms', 0.0), data.get('max_error', 0.0))


@dataclass
class CalibrationLattice:
    """Dense (nx, ny, nz) arrays of correspondences; missing nodes hold NaN."""

    volume: WorkVolume
    camera_points: npt.NDArray
    robot_points: npt.NDArray
    missing: npt.NDArray
    corrections: npt.NDArray = None
    world_digest: Optional[str] = None

    def __post_init__(self):
        shape = self.volume.shape
        if self.camera_points.shape != shape + (3,) or self.robot_points.shape != shape + (3,):
            raise InvalidVolume(f'point arrays must have shape {shape + (3,)}')
        if self.missing.shape != shape:
            raise InvalidVolume(f'missing mask must have shape {shape}')
        if self.corrections is None:
            self.corrections = np.zeros(shape + (3,))

    @property
    def shape(self) -> Index:
        return self.volume.shape

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    @property
    def missing_fraction(self) -> float:
        return self.n_missing / self.missing.size

    def pairs(self) -> Iterator[CorrespondencePair]:
        for idx in zip(*np.nonzero(~self.missing)):
            idx = tuple(int(i) for i in idx)
            yield CorrespondencePair(tuple(self.camera_points[idx]), tuple(self.robot_points[idx]), idx)

    def copy(self) -> 'CalibrationLattice':
        return CalibrationLattice(self.volume, self.camera_points.copy(), self.robot_points.copy(),
                                  self.missing.copy(), self.corrections.copy(), self.world_digest)

    def digest(self) -> str:
        return digest_array(np.nan_to_num(self.camera_points), self.robot_points,
                            self.missing, self.corrections)

    def to_dict(self, global_map: Optional[GlobalLinearMap] = None) -> dict:
        nodes = []
        for idx in product(*[range(n) for n in self.shape]):
            nodes.append({
                'index': list(idx),
                'camera_point': None if self.missing[idx] else self.camera_points[idx].tolist(),
                'robot_point': self.robot_points[idx].tolist(),
                'correction': self.corrections[idx].tolist(),
                'missing': bool(self.missing[idx]),
            })
        return {
            'volume': asdict(self.volume),
            'nodes': nodes,
            'global_map': None if global_map is None else global_map.to_dict(),
            'world_digest': self.world_digest,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Tuple['CalibrationLattice', Optional[GlobalLinearMap]]:
        v = data['volume']
        volume = WorkVolume(tuple(v['origin']), tuple(v['extents']), v['spacing'])
        shape = volume.shape
        cam = np.full(shape + (3,), np.nan)
        rob = np.zeros(shape + (3,))
        cor = np.zeros(shape + (3,))
        missing = np.zeros(shape, dtype=bool)
        for node in data['nodes']:
            idx = tuple(node['index'])
            rob[idx] = node['robot_point']
            cor[idx] = node['correction']
            missing[idx] = node['missing']
            if not node['missing']:
                cam[idx] = node['camera_point']
        lattice = cls(volume, cam, rob, missing, cor, data.get('world_digest'))
        gm = data.get('global_map')
        return lattice, None if gm is None else GlobalLinearMap.from_dict(gm)


def save_lattice(path: Union[str, Path], lattice: CalibrationLattice,
                 global_map: Optional[GlobalLinearMap] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(lattice.to_dict(global_map)))
    return path


def load_lattice(path: Union[str, Path]) -> Tuple[CalibrationLattice, Optional[GlobalLinearMap]]:
    return CalibrationLattice.from_dict(json.loads(Path(path).read_text()))


def collect_correspondences(
        world: TrueWorldModel,
        volume: WorkVolume = WorkVolume(),
        faults: Optional[Dict[Index, JigFault]] = None,
        depth_window: int = 1,
        max_missing: float = 0.01,
        seed: int = 0,
        progress: bool = False,
) -> CalibrationLattice:
    """Drive the jig to every node and measure the marker in camera coordinates.

    Nodes whose marker is missing or ambiguous are marked missing; more than
    max_missing of them raises TooManyMissing.
    """
    faults = faults or {}
    shape = volume.shape
    cam = np.full(shape + (3,), np.nan)
    rob = np.zeros(shape + (3,))
    missing = np.zeros(shape, dtype=bool)
    indices = list(product(*[range(n) for n in shape]))
    for flat, idx in enumerate(tqdm(indices, desc='lattice', disable=not progress)):
        node = volume.node(idx)
        rob[idx] = node
        capture = simulate_jig_capture(world, node, faults.get(idx), derive_rng(seed, 7, flat))
        try:
            centroid = find_marker_centroid(capture.rgb, MARKER_COLOR_WINDOW,
                                            MARKER_MIN_AREA, MARKER_MAX_AREA, MARKER_SUPPORT_PX)
            cam[idx] = get_3d(centroid, capture.depth, capture.intrinsics(world.intrinsics),
                              depth_window)
        except (NoMarker, AmbiguousMarker, NoDepth) as e:
            logger.warning(f'node {idx}: {type(e).__name__}: {e}')
            missing[idx] = True
    lattice = CalibrationLattice(volume, cam, rob, missing, world_digest=world.digest())
    logger.info(f'collected {lattice.missing.size - lattice.n_missing}/{lattice.missing.size} '
                f'nodes ({lattice.n_missing} missing)')
    if lattice.missing_fraction > max_missing:
        raise TooManyMissing(f'{lattice.missing_fraction:.2%} of nodes missing, '
                             f'budget {max_missing:.2%}')
    return lattice


def fit_affine(camera: npt.ArrayLike, robot: npt.ArrayLike) -> GlobalLinearMap:
    """Least-squares 12-parameter affine fit, robot ~ A @ camera + t."""
    cam = np.asarray(camera, dtype=float).reshape(-1, 3)
    rob = np.asarray(robot, dtype=float).reshape(-1, 3)
    if len(cam) != len(rob):
        raise ValueError(f'{len(cam)} camera points vs {len(rob)} robot points')
    if len(cam) < 4:
        raise DegenerateGeometry(f'need at least 4 pairs, got {len(cam)}')
    sv = np.linalg.svd(cam - cam.mean(axis=0), compute_uv=False)
    if sv[0] <= 0 or sv[2] / sv[0] < 1e-9:
        raise DegenerateGeometry('camera points are collinear or coplanar')
    design = np.hstack([cam, np.ones((len(cam), 1))])
    coef, *_ = np.linalg.lstsq(design, rob, rcond=None)
    matrix = coef.T
    resid = np.linalg.norm(design @ coef - rob, axis=1)
    return GlobalLinearMap(matrix, float(np.sqrt(np.mean(resid ** 2))), float(resid.max()))


def fit_global_map(lattice: CalibrationLattice) -> GlobalLinearMap:
    ok = ~lattice.missing
    gm = fit_affine(lattice.camera_points[ok], lattice.robot_points[ok])
    logger.info(f'global map: rms={gm.rms:.4f} mm, max={gm.max_error:.4f} mm')
    return gm


def coarse_map(T: GlobalLinearMap, p_center: npt.ArrayLike) -> npt.NDArray:
    return T.apply(p_center)


@dataclass
class Neighborhood27:
    center_index: Index
    indices: npt.NDArray        # (27, 3)
    camera_points: npt.NDArray  # (27, 3)
    robot_points: npt.NDArray   # (27, 3)
    spacing: float

    def pairs(self):
        return [CorrespondencePair(tuple(c), tuple(r), tuple(int(i) for i in idx))
                for c, r, idx in zip(self.camera_points, self.robot_points, self.indices)]


_BLOCK = np.array(list(product((-1, 0, 1), repeat=3)))


def _block_complete(lattice: CalibrationLattice, center: npt.NDArray) -> bool:
    idx = center + _BLOCK
    return not lattice.missing[idx[:, 0], idx[:, 1], idx[:, 2]].any()


def get_local_points(lattice: CalibrationLattice, p_rough: npt.ArrayLike) -> Neighborhood27:
    """The 3x3x3 block around the node nearest p_rough.

    The center is clamped one node inside the lattice; blocks with missing
    nodes shift to the nearest complete block within SEARCH_RADIUS nodes.
    """
    vol = lattice.volume
    shape = np.array(lattice.shape)
    if np.any(shape < 3):
        raise InvalidVolume(f'lattice {tuple(shape)} too small for a 3x3x3 block')
    rel = (np.asarray(p_rough, dtype=float) - np.asarray(vol.origin)) / vol.spacing
    if not np.all(np.isfinite(rel)) or np.any(rel < -1) or np.any(rel > shape):
        raise OutsideLattice(f'{p_rough} is more than one spacing outside the lattice')
    center = np.clip(np.rint(rel).astype(int), 1, shape - 2)
    if not _block_complete(lattice, center):
        offsets = np.array(list(product(range(-SEARCH_RADIUS, SEARCH_RADIUS + 1), repeat=3)))
        cands = np.unique(np.clip(center + offsets, 1, shape - 2), axis=0)
        order = np.lexsort((cands[:, 2], cands[:, 1], cands[:, 0],
                            np.sum((cands - rel) ** 2, axis=1)))
        for cand in cands[order]:
            if _block_complete(lattice, cand):
                center = cand
                break
        else:
            raise NoCompleteBlock(f'no complete block within {SEARCH_RADIUS} nodes of {p_rough}')
    idx = center + _BLOCK
    sel = (idx[:, 0], idx[:, 1], idx[:, 2])
    return Neighborhood27(
        center_index=tuple(int(c) for c in center),
        indices=idx,
        camera_points=lattice.camera_points[sel],
        robot_points=lattice.robot_points[sel],
        spacing=vol.spacing,
    )


def quadratic_design(q: npt.NDArray) -> npt.NDArray:
    """Monomials 1, x, y, z, x^2, y^2, z^2, xy, yz, zx per row."""
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    return np.stack([np.ones_like(x), x, y, z, x * x, y * y, z * z, x * y, y * z, z * x], axis=1)


def local_interpolate(
        p_center: npt.ArrayLike,
        n: Neighborhood27,
        cond_bound: float = COND_BOUND,
) -> npt.NDArray:
    """Per-axis least-squares quadratic over the block, evaluated at p_center."""
    mean = n.camera_points.mean(axis=0)
    design = quadratic_design((n.camera_points - mean) / n.spacing)
    cond = np.linalg.cond(design.T @ design)
    if not np.isfinite(cond) or cond > cond_bound:
        raise IllConditioned(f'normal matrix condition number {cond:.3g}')
    coef, *_ = np.linalg.lstsq(design, n.robot_points, rcond=None)
    q = (np.asarray(p_center, dtype=float).reshape(1, 3) - mean) / n.spacing
    return (quadratic_design(q) @ coef)[0]


def camera_to_robot(
        p_center: npt.ArrayLike,
        lattice: CalibrationLattice,
        T: GlobalLinearMap,
) -> npt.NDArray:
    nb = get_local_points(lattice, coarse_map(T, p_center))
    return local_interpolate(p_center, nb) + lattice.corrections[nb.center_index]


def camera_to_robot_global(p_center: npt.ArrayLike, T: GlobalLinearMap) -> npt.NDArray:
    return coarse_map(T, p_center)


@dataclass
class VerificationResult:
    errors: pd.DataFrame
    summary: dict = field(default_factory=dict)


def _region_label(p: npt.NDArray, volume: WorkVolume) -> str:
    mid = np.asarray(volume.origin) + np.asarray(volume.extents) / 2
    return ''.join(f'{axis}{"+" if v >= m else "-"}' for axis, v, m in zip('xyz', p, mid))


def verify_positioning(
        lattice: CalibrationLattice,
        T: GlobalLinearMap,
        world: TrueWorldModel,
        n_queries: int = 10000,
        seed: int = 0,
        mode: Literal['local', 'global'] = 'local',
) -> VerificationResult:
    """Commanded-vs-true positioning error at uniform random robot points.

    Each query point is imaged through the world (no sensor noise), mapped
    back with the calibration and compared with where it truly is.
    """
    if mode not in ('local', 'global'):
        raise ValueError(f"mode must be 'local' or 'global', got {mode!r}")
    vol = lattice.volume
    rng = derive_rng(seed, 11)
    lo = np.asarray(vol.origin, dtype=float)
    truth = lo + rng.uniform(size=(n_queries, 3)) * np.asarray(vol.extents)
    camera = world.inverse_map(truth)
    rows = []
    failed = 0
    for r, p in zip(truth, camera):
        try:
            if mode == 'local':
                cmd = camera_to_robot(p, lattice, T)
            else:
                cmd = camera_to_robot_global(p, T)
        except (OutsideLattice, NoCompleteBlock, IllConditioned) as e:
            logger.warning(f'query at {r} failed: {e}')
            failed += 1
            cmd = np.full(3, np.nan)
        err = cmd - r
        rows.append({
            'x': r[0], 'y': r[1], 'z': r[2],
            'dx': err[0], 'dy': err[1], 'dz': err[2],
            'error': float(np.linalg.norm(err)),
            'region': _region_label(r, vol),
        })
    errors = pd.DataFrame(rows)
    e = errors['error'].dropna()
    summary = {
        'mode': mode,
        'n_queries': int(n_queries),
        'n_failed': failed,
        'max': float(e.max()) if len(e) else float('nan'),
        'rms': float(np.sqrt(np.mean(e ** 2))) if len(e) else float('nan'),
        'p50': float(e.quantile(0.5)) if len(e) else float('nan'),
        'p95': float(e.quantile(0.95)) if len(e) else float('nan'),
        'p99': float(e.quantile(0.99)) if len(e) else float('nan'),
        'by_region': errors.groupby('region')['error'].max().to_dict(),
    }
    logger.info(f"verification ({mode}): max={summary['max']:.4f} mm, rms={summary['rms']:.4f} mm")
    return VerificationResult(errors, summary)


def apply_correction(
        lattice: CalibrationLattice,
        node_index: Sequence[int],
        residual: npt.ArrayLike,
) -> CalibrationLattice:
    """New lattice whose node correction absorbs a measured residual.

    residual is commanded minus true robot position at that node; it is
    subtracted from the node's stored correction.
    """
    idx = tuple(int(i) for i in node_index)
    if len(idx) != 3 or any(not (0 <= i < n) for i, n in zip(idx, lattice.shape)):
        raise ValueError(f'node index {node_index} outside lattice {lattice.shape}')
    out = lattice.copy()
    out.corrections[idx] -= np.asarray(residual, dtype=float)
    return out


def correct_from_verification(
        lattice: CalibrationLattice,
        T: GlobalLinearMap,
        world: TrueWorldModel,
        tol: float = 0.1,
) -> Tuple[CalibrationLattice, int]:
    """Re-measure every interior block-center node and correct those off by more than tol.

    Returns the corrected lattice and the number of corrected nodes.
    """
    out = lattice
    n_corrected = 0
    nx, ny, nz = lattice.shape
    for idx in product(range(1, nx - 1), range(1, ny - 1), range(1, nz - 1)):
        if lattice.missing[idx]:
            continue
        node = lattice.robot_points[idx]
        try:
            cmd = camera_to_robot(world.inverse_map(node), out, T)
        except (OutsideLattice, NoCompleteBlock, IllConditioned):
            continue
        residual = cmd - node
        if np.linalg.norm(residual) > tol:
            out = apply_correction(out, idx, residual)
            n_corrected += 1
    logger.info(f'corrected {n_corrected} nodes above {tol} mm')
    return out, n_corrected
