"""Dataset generation, training and the three evaluation runs.

All randomness is derived from RunConfig.seed with fixed offsets, so a
report's embedded config reproduces its numbers.
"""
import json
import time
import numpy as np
import pandas as pd
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path
from sklearn.model_selection import train_test_split
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union
from scrloc.errors import IllConditioned, MissingModels, NoCompleteBlock, OutsideLattice
from scrloc.harness.config import RunConfig
from scrloc.io import save_detection_report, save_scene_bundle, write_pbm, write_pgm16
from scrloc.logging import get_logger
from scrloc.models.fcn.network import FcnModel, LabeledPatch, forward, load_model, save_model
from scrloc.models.fcn.training import make_ensemble, pixel_accuracy, train
from scrloc.synth.scene import (
    Degradation,
    NEGATIVE_KINDS,
    RenderedScene,
    random_scene_spec,
    random_screw_spec,
    render_patch,
    render_scene,
)
from scrloc.synth.world import TrueWorldModel
from scrloc.tools.calib import (
    CalibrationLattice,
    GlobalLinearMap,
    camera_to_robot,
    camera_to_robot_global,
    collect_correspondences,
    correct_from_verification,
    fit_global_map,
    verify_positioning,
)
from scrloc.tools.detect import DetectionResult, RgbdImage, normalize_illumination, run_detection
from scrloc.tools.imgproc import threshold, to_grayscale
from scrloc.tools.metrics import EvalReport, batch_success, match_detections
from scrloc.utils import binomial_interval, derive_rng, parallel_map


logger = get_logger('harness')

PathLike = Union[str, Path]
DatasetKind = Literal['recall', 'precision']

# Seed offsets per sub-task.
SEED_DATASET = {'recall': 30, 'precision': 31}
SEED_SPLIT = 32
SEED_TEG = 40
SEED_CALIB = 50
SEED_UNIT = 60
PANEL_DEPTH = 1500.0

# Negative mix of the recall set; the precision set uses render_patch's confuser-heavy default.
RECALL_NEGATIVE_MIX = (0.6, 0.1, 0.1, 0.1, 0.1)


def _make_patch(
        item: Tuple[int, bool, Optional[str]],
        size: int,
        normalize: bool,
) -> LabeledPatch:
    seed, positive, negative_kind = item
    spec = random_screw_spec(derive_rng(seed, 1), in_spec=True)
    patch = render_patch(spec, positive, seed, size=size, negative_kind=negative_kind)
    if normalize:
        patch = LabeledPatch(normalize_illumination(patch.image), patch.label)
    return patch


def generate_dataset(
        config: RunConfig,
        kind: DatasetKind,
        progress: bool = False,
) -> List[LabeledPatch]:
    """Labelled patches for the recall (stage 1) or precision (stage 2) model.

    Precision patches are gamma-normalized the way stage 2 sees its crops.
    """
    if kind not in SEED_DATASET:
        raise ValueError(f"kind must be 'recall' or 'precision', got {kind!r}")
    dc = config.dataset
    rng = derive_rng(config.seed, SEED_DATASET[kind])
    n = dc.n_positive + dc.n_negative
    seeds = rng.integers(2 ** 31, size=n)
    positive = np.arange(n) < dc.n_positive
    if kind == 'recall':
        kinds = rng.choice(NEGATIVE_KINDS, size=n, p=RECALL_NEGATIVE_MIX)
    else:
        kinds = [None] * n
    items = [(int(s), bool(p), None if p or k is None else str(k))
             for s, p, k in zip(seeds, positive, kinds)]
    func = partial(_make_patch, size=dc.patch_size, normalize=kind == 'precision')
    patches = parallel_map(func, items, n_jobs=config.n_jobs, desc=f'{kind} patches',
                           progress=progress)
    logger.info(f'generated {len(patches)} {kind} patches ({dc.n_positive} positive)')
    return patches


def save_dataset(path: PathLike, patches: Sequence[LabeledPatch], manifest: dict = None) -> Path:
    """Compressed NPZ of images and labels plus a JSON manifest beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = np.stack([p.image for p in patches])
    labels = np.stack([p.label for p in patches])
    np.savez_compressed(path, images=images, labels=labels)
    info = dict(manifest or {}, n=len(patches), n_positive=int(labels.any(axis=(1, 2)).sum()),
                shape=list(images.shape[1:]))
    path.with_suffix('.json').write_text(json.dumps(info, indent=2))
    return path


def load_dataset(path: PathLike) -> List[LabeledPatch]:
    with np.load(Path(path)) as data:
        return [LabeledPatch(x, y.astype(bool)) for x, y in zip(data['images'], data['labels'])]


def _split(
        patches: Sequence[LabeledPatch],
        holdout: float,
        seed: int,
) -> Tuple[List[LabeledPatch], List[LabeledPatch]]:
    if holdout <= 0:
        return list(patches), []
    strata = [bool(p.label.any()) for p in patches]
    train_set, test_set = train_test_split(list(patches), test_size=holdout,
                                           stratify=strata, random_state=seed)
    return train_set, test_set


@dataclass
class ModelBundle:
    recall: FcnModel
    ensemble: List[FcnModel]
    metrics: Dict[str, float] = field(default_factory=dict)

    def digests(self) -> Dict[str, str]:
        out = {'recall': self.recall.digest()}
        out.update({f'precision_{i}': m.digest() for i, m in enumerate(self.ensemble)})
        return out


def train_models(
        config: RunConfig,
        recall_data: Sequence[LabeledPatch],
        precision_data: Sequence[LabeledPatch],
        progress: bool = False,
) -> ModelBundle:
    """Recall model plus precision ensemble, scored on a stratified hold-out."""
    split_seed = int(derive_rng(config.seed, SEED_SPLIT).integers(2 ** 31))
    recall_train, recall_test = _split(recall_data, config.dataset.holdout, split_seed)
    precision_train, precision_test = _split(precision_data, config.dataset.holdout, split_seed)
    seed = config.seed + config.training.seed

    recall_cfg = replace(config.training, class_weights=config.recall_class_weights, seed=seed)
    recall, _ = train(recall_cfg, recall_train, progress=progress)
    precision_cfg = replace(config.training, class_weights=config.precision_class_weights,
                            seed=seed + 1)
    ensemble = make_ensemble(precision_cfg, precision_train, k=config.ensemble_size,
                             n_jobs=config.n_jobs, progress=progress)

    metrics = {}
    if recall_test:
        metrics['recall_accuracy'] = pixel_accuracy(recall, recall_test)
        for i, m in enumerate(ensemble):
            metrics[f'precision_{i}_accuracy'] = pixel_accuracy(m, precision_test)
        logger.info('held-out pixel accuracy: '
                    + ', '.join(f'{k}={v:.4f}' for k, v in metrics.items()))
    return ModelBundle(recall, ensemble, metrics)


def save_models(bundle: ModelBundle, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_model(bundle.recall, directory / 'recall.sfcn')
    for i, m in enumerate(bundle.ensemble):
        save_model(m, directory / f'precision_{i}.sfcn')
    manifest = {'ensemble_size': len(bundle.ensemble), 'metrics': bundle.metrics,
                'digests': bundle.digests()}
    (directory / 'models.json').write_text(json.dumps(manifest, indent=2))
    return directory


def load_models(directory: PathLike) -> ModelBundle:
    directory = Path(directory)
    manifest_path = directory / 'models.json'
    if not manifest_path.exists():
        raise MissingModels(f'no models.json in {directory}; run `scrloc train` first')
    manifest = json.loads(manifest_path.read_text())
    paths = [directory / 'recall.sfcn'] + [directory / f'precision_{i}.sfcn'
                                           for i in range(manifest['ensemble_size'])]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise MissingModels(f'{directory} is missing {", ".join(missing)}')
    models = [load_model(p) for p in paths]
    return ModelBundle(models[0], models[1:], manifest.get('metrics', {}))


def _teg_scene(
        index: int,
        config: RunConfig,
        world: TrueWorldModel,
        n_screws: int,
        n_confusers: int,
        in_spec: bool = True,
        degraded: bool = True,
) -> RenderedScene:
    c = config.teg
    rng = derive_rng(config.seed, SEED_TEG, index)
    spec = random_scene_spec(rng, n_screws, n_confusers, c.width, c.height,
                             panel_depth=PANEL_DEPTH, in_spec=in_spec,
                             intrinsics=world.intrinsics)
    if not degraded:
        spec = replace(spec, screws=tuple(
            replace(s, degradation=Degradation(), recess_offset_mm=(0.0, 0.0))
            for s in spec.screws))
    return render_scene(spec, world)


def save_sample_scenes(config: RunConfig, directory: PathLike, n: int = 3) -> List[Path]:
    """Write the first n TEG scenes as bundles (rgb.png, depth.f32, truth.json)."""
    world = TrueWorldModel.from_params(config.world)
    c = config.teg
    paths = []
    for index in range(n):
        scene = _teg_scene(index, config, world, c.screws_per_scene, c.confusers_per_scene,
                           c.in_spec, c.degraded)
        paths.append(save_scene_bundle(Path(directory) / f'scene_{index:04d}',
                                       RgbdImage(scene.rgb, scene.depth),
                                       [t.to_dict() for t in scene.truth]))
    logger.info(f'wrote {n} sample scenes to {directory}')
    return paths


def _save_scene(
        directory: Path,
        index: int,
        config: RunConfig,
        scene: RenderedScene,
        result: DetectionResult,
        bundle: ModelBundle,
) -> Path:
    """Scene bundle, stage-1 rasters and the detection report for one scene."""
    directory = directory / f'scene_{index:04d}'
    save_scene_bundle(directory, RgbdImage(scene.rgb, scene.depth),
                      [t.to_dict() for t in scene.truth])
    pmap = forward(bundle.recall, to_grayscale(scene.rgb))
    write_pgm16(directory / 'recall_pmap.pgm', pmap)
    write_pbm(directory / 'coarse_mask.pbm', threshold(pmap, config.detect.tau_coarse))
    save_detection_report(directory / 'detections.json', result.to_records(),
                          scene=index, seed=config.seed, params=asdict(config.detect),
                          model_digests=bundle.digests())
    return directory


def _eval_scene(
        index: int,
        config: RunConfig,
        world: TrueWorldModel,
        bundle: ModelBundle,
        scenes_dir: Optional[Path] = None,
) -> List[dict]:
    c = config.teg
    scene = _teg_scene(index, config, world, c.screws_per_scene, c.confusers_per_scene,
                       c.in_spec, c.degraded)
    result = run_detection(RgbdImage(scene.rgb, scene.depth), bundle.recall, bundle.ensemble,
                           scene.intrinsics, config.detect)
    if scenes_dir is not None:
        _save_scene(scenes_dir, index, config, scene, result, bundle)
    detected = [d.p_global for d in result.detections]
    truth = [t.pixel for t in scene.truth]
    pairs, unmatched_det, _ = match_detections(detected, truth, c.match_radius)
    by_truth = {t: d for d, t in pairs}
    rows = []
    for j, t in enumerate(scene.truth):
        d = by_truth.get(j)
        row = {'scene': index, 'kind': 'screw', 'x': t.pixel[0], 'y': t.pixel[1],
               'in_spec': t.in_spec, 'matched': d is not None,
               'det_x': np.nan, 'det_y': np.nan, 'error_px': np.nan, 'confidence': np.nan}
        if d is not None:
            det = result.detections[d]
            row.update(det_x=det.p_global[0], det_y=det.p_global[1],
                       error_px=float(np.hypot(det.p_global[0] - t.pixel[0],
                                               det.p_global[1] - t.pixel[1])),
                       confidence=det.confidence)
        rows.append(row)
    for d in unmatched_det:
        det = result.detections[d]
        rows.append({'scene': index, 'kind': 'false_positive', 'x': np.nan, 'y': np.nan,
                     'in_spec': False, 'matched': False, 'det_x': det.p_global[0],
                     'det_y': det.p_global[1], 'error_px': np.nan,
                     'confidence': det.confidence})
    return rows


def run_teg_eval(
        config: RunConfig,
        bundle: Optional[ModelBundle],
        progress: bool = False,
        scenes_dir: Optional[PathLike] = None,
) -> Tuple[EvalReport, pd.DataFrame]:
    """Detection recall, precision and center error over synthetic TEG scenes.

    The synthetic gauge adds confusers so precision is measurable; the report
    flags this with synthetic_negatives. With scenes_dir, every scene is kept
    as a bundle beside its JSON detection report, dropped candidates included.
    """
    if bundle is None:
        raise MissingModels('run_teg_eval needs a trained recall model and ensemble')
    start = time.perf_counter()
    world = TrueWorldModel.from_params(config.world)
    func = partial(_eval_scene, config=config, world=world, bundle=bundle,
                   scenes_dir=None if scenes_dir is None else Path(scenes_dir))
    per_scene = parallel_map(func, range(config.teg.n_scenes), n_jobs=config.n_jobs,
                             desc='TEG scenes', progress=progress)
    detail = pd.DataFrame([row for rows in per_scene for row in rows])
    screws = detail[detail['kind'] == 'screw']
    tp = int(screws['matched'].sum())
    fn = int(len(screws) - tp)
    fp = int((detail['kind'] == 'false_positive').sum())
    n_out = int((~screws['in_spec'].astype(bool)).sum())
    if n_out:
        logger.warning(f'{n_out} screws lie outside the operating envelope')
    report = EvalReport.from_counts(
        tp, fn, fp,
        errors_px=screws.loc[screws['matched'], 'error_px'].to_numpy(),
        mm_per_px=world.intrinsics.mm_per_pixel(PANEL_DEPTH),
        n_confusers=config.teg.n_scenes * config.teg.confusers_per_scene,
        n_out_of_spec=n_out,
        runtime_s=time.perf_counter() - start,
        config=config.to_dict(),
        model_digests=bundle.digests(),
    )
    logger.info(f'TEG: TP={tp} FN={fn} FP={fp} recall={report.recall:.4f} '
                f'p95 center error={report.center_error_px["p95"]:.3f} px')
    return report, detail


@dataclass
class CalibEvaluation:
    lattice: CalibrationLattice
    global_map: GlobalLinearMap
    errors: Dict[str, pd.DataFrame]
    summary: dict

    @property
    def passed(self) -> bool:
        return bool(self.summary['passed'])


def build_calibration(
        config: RunConfig,
        world: TrueWorldModel,
        progress: bool = False,
) -> Tuple[CalibrationLattice, GlobalLinearMap, int]:
    """Collect the lattice, fit the global map and optionally correct nodes."""
    c = config.calib
    lattice = collect_correspondences(world, c.volume, depth_window=c.depth_window,
                                      max_missing=c.max_missing,
                                      seed=config.seed + SEED_CALIB, progress=progress)
    T = fit_global_map(lattice)
    n_corrected = 0
    if c.correct:
        lattice, n_corrected = correct_from_verification(lattice, T, world, c.correction_tol)
    return lattice, T, n_corrected


def run_calib_eval(
        config: RunConfig,
        lattice: Optional[CalibrationLattice] = None,
        global_map: Optional[GlobalLinearMap] = None,
        progress: bool = False,
) -> CalibEvaluation:
    """Local and global-only positioning error over random robot queries."""
    start = time.perf_counter()
    c = config.calib
    world = TrueWorldModel.from_params(config.world)
    n_corrected = 0
    if lattice is None:
        lattice, global_map, n_corrected = build_calibration(config, world, progress)
    elif global_map is None:
        global_map = fit_global_map(lattice)
    if lattice.world_digest not in (None, world.digest()):
        logger.warning('lattice was collected in a different world')

    results = {mode: verify_positioning(lattice, global_map, world, c.n_queries,
                                        seed=config.seed, mode=mode)
               for mode in ('local', 'global')}
    local, glob = results['local'].summary, results['global'].summary
    summary = {
        'local': local,
        'global': glob,
        'max_error': c.max_error,
        'passed': bool(local['n_failed'] == 0 and local['max'] <= c.max_error),
        'global_exceeds': bool(glob['max'] > c.max_error),
        'n_corrected': n_corrected,
        'n_missing': lattice.n_missing,
        'global_fit_rms': global_map.rms,
        'lattice_digest': lattice.digest(),
        'world_digest': world.digest(),
        'runtime_s': time.perf_counter() - start,
        'config': config.to_dict(),
    }
    if not summary['global_exceeds']:
        logger.warning('global-only map is within the limit on this world')
    return CalibEvaluation(lattice, global_map,
                           {mode: r.errors for mode, r in results.items()}, summary)


def _simulate_one(
        index: int,
        config: RunConfig,
        world: TrueWorldModel,
        bundle: ModelBundle,
        lattice: CalibrationLattice,
        global_map: GlobalLinearMap,
) -> List[dict]:
    u = config.unit
    rng = derive_rng(config.seed, SEED_UNIT, index)
    spec = random_scene_spec(rng, u.screws_per_unit, u.confusers_per_unit, u.width, u.height,
                             panel_depth=PANEL_DEPTH, intrinsics=world.intrinsics)
    scene = render_scene(spec, world)
    result = run_detection(RgbdImage(scene.rgb, scene.depth), bundle.recall, bundle.ensemble,
                           scene.intrinsics, config.detect)
    pairs, _, _ = match_detections([d.p_global for d in result.detections],
                                   [t.pixel for t in scene.truth], u.match_radius)
    by_truth = {t: d for d, t in pairs}
    rows = []
    for j, t in enumerate(scene.truth):
        target = world.true_robot_point(t.camera)
        row = {'unit': index, 'screw': j, 'detected': j in by_truth,
               'error_local': np.inf, 'error_global': np.inf}
        if j in by_truth:
            p_3d = result.detections[by_truth[j]].p_3d
            row['error_global'] = float(np.linalg.norm(
                camera_to_robot_global(p_3d, global_map) - target))
            try:
                row['error_local'] = float(np.linalg.norm(
                    camera_to_robot(p_3d, lattice, global_map) - target))
            except (OutsideLattice, NoCompleteBlock, IllConditioned) as e:
                logger.warning(f'unit {index} screw {j}: {e}')
        rows.append(row)
    return rows


def _unit_stats(detail: pd.DataFrame, units: int, n_screws: int, column: str, radius: float) -> dict:
    ok = detail[column] <= radius if len(detail) else pd.Series(dtype=bool)
    n_ok = int(ok.sum())
    unit_ok = ok.groupby(detail['unit']).all() if len(detail) else pd.Series(dtype=bool)
    # Units with no screws never appear in detail and succeed trivially.
    n_units_ok = int(unit_ok.sum()) + (units - len(unit_ok))
    screw_rate = n_ok / len(detail) if len(detail) else 1.0
    return {
        'screw_rate': screw_rate,
        'screw_rate_ci': binomial_interval(n_ok, len(detail)),
        'unit_rate': n_units_ok / units if units else 1.0,
        'unit_rate_ci': binomial_interval(n_units_ok, units),
        'predicted_unit_rate': batch_success(screw_rate, n_screws),
    }


def simulate_unit(
        config: RunConfig,
        bundle: Optional[ModelBundle],
        lattice: CalibrationLattice,
        global_map: GlobalLinearMap,
        progress: bool = False,
) -> Tuple[dict, pd.DataFrame]:
    """Monte-Carlo unit completion: every screw detected and reached within success_radius.

    Both calibrations are scored on the same detections; global_only picks
    which one the acceptance check uses.
    """
    if bundle is None:
        raise MissingModels('simulate_unit needs a trained recall model and ensemble')
    start = time.perf_counter()
    u = config.unit
    world = TrueWorldModel.from_params(config.world)
    func = partial(_simulate_one, config=config, world=world, bundle=bundle,
                   lattice=lattice, global_map=global_map)
    per_unit = parallel_map(func, range(u.n_units), n_jobs=config.n_jobs,
                            desc='units', progress=progress)
    detail = pd.DataFrame([row for rows in per_unit for row in rows],
                          columns=['unit', 'screw', 'detected', 'error_local', 'error_global'])
    stats = {mode: _unit_stats(detail, u.n_units, u.screws_per_unit, f'error_{mode}',
                               u.success_radius)
             for mode in ('local', 'global')}
    primary = stats['global' if u.global_only else 'local']
    summary = {
        **stats,
        'mode': 'global' if u.global_only else 'local',
        'n_units': u.n_units,
        'screws_per_unit': u.screws_per_unit,
        'success_radius': u.success_radius,
        'passed': bool(primary['screw_rate'] >= u.min_screw_rate
                       and primary['unit_rate'] >= u.min_unit_rate),
        'lattice_digest': lattice.digest(),
        'world_digest': world.digest(),
        'model_digests': bundle.digests(),
        'runtime_s': time.perf_counter() - start,
        'config': config.to_dict(),
    }
    logger.info(f"units: local rate {stats['local']['unit_rate']:.3f}, "
                f"global-only rate {stats['global']['unit_rate']:.3f}")
    return summary, detail


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_report(
        directory: PathLike,
        name: str,
        summary: dict,
        detail: Optional[pd.DataFrame] = None,
) -> Path:
    """<name>_summary.json plus, when given, <name>_detail.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f'{name}_summary.json'
    path.write_text(json.dumps(_jsonable(summary), indent=2))
    if detail is not None:
        detail.to_csv(directory / f'{name}_detail.csv', index=False)
    logger.info(f'wrote {path}')
    return path
