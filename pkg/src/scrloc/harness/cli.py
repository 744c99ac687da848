"""``scrloc`` command line.

Exit codes: 0 on success, 2 when an acceptance threshold is missed, 1 on error.
"""
import argparse
import sys
import matplotlib.pyplot as plt
from dataclasses import replace
from pathlib import Path
from typing import List, Optional
from scrloc.errors import ScrlocError
from scrloc.io import load_detection_report, load_scene_bundle
from scrloc.harness.config import RunConfig
from scrloc.harness.evaluation import (
    build_calibration,
    generate_dataset,
    load_dataset,
    load_models,
    run_calib_eval,
    run_teg_eval,
    save_dataset,
    save_models,
    save_sample_scenes,
    simulate_unit,
    train_models,
    write_report,
)
from scrloc.logging import DEBUG, INFO, WARNING, get_logger, set_verbosity
from scrloc.plotting import (
    plot_center_errors,
    plot_detections,
    plot_error_distributions,
    plot_error_field,
    plot_region_max,
)
from scrloc.synth.world import TrueWorldModel
from scrloc.tools.calib import fit_global_map, load_lattice, save_lattice


logger = get_logger('harness')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.n_jobs is not None:
        overrides['n_jobs'] = args.n_jobs
    if args.plots:
        overrides['plots'] = True
    return replace(config, **overrides)


def _datasets(config: RunConfig, args: argparse.Namespace):
    if args.dataset:
        d = Path(args.dataset)
        return load_dataset(d / 'recall.npz'), load_dataset(d / 'precision.npz')
    return (generate_dataset(config, 'recall', progress=args.progress),
            generate_dataset(config, 'precision', progress=args.progress))


def _calibration(config: RunConfig, args: argparse.Namespace):
    if args.lattice:
        lattice, T = load_lattice(args.lattice)
        return lattice, T or fit_global_map(lattice)
    world = TrueWorldModel.from_params(config.world)
    lattice, T, _ = build_calibration(config, world, progress=args.progress)
    return lattice, T


def _save_figure(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(f'wrote {path}')


def _plot_scene(scene_dir: Path, path: Path) -> None:
    img, truth = load_scene_bundle(scene_dir)
    report = load_detection_report(scene_dir / 'detections.json')
    detected = [d['p_global'] for d in report['detections'] if 'drop_reason' not in d]
    fig, ax = plt.subplots(figsize=(7, 6))
    plot_detections(img.rgb, detected, [t['pixel'] for t in truth], ax=ax)
    ax.set_title(f'scene {report["scene"]}: {len(detected)} detections, {len(truth)} screws')
    _save_figure(fig, path)


def cmd_synth_dataset(config: RunConfig, args: argparse.Namespace) -> int:
    for kind in ('recall', 'precision'):
        patches = generate_dataset(config, kind, progress=args.progress)
        save_dataset(args.out / f'{kind}.npz', patches,
                     {'kind': kind, 'seed': config.seed, 'config': config.to_dict()})
    save_sample_scenes(config, args.out / 'scenes', args.sample_scenes)
    return EXIT_OK


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    recall_data, precision_data = _datasets(config, args)
    bundle = train_models(config, recall_data, precision_data, progress=args.progress)
    save_models(bundle, args.out / 'models')
    return EXIT_OK


def cmd_eval_teg(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = load_models(args.models)
    scenes_dir = args.out / 'teg_scenes'
    report, detail = run_teg_eval(config, bundle, progress=args.progress, scenes_dir=scenes_dir)
    t = config.teg
    summary = report.to_dict()
    if t.in_spec:
        summary['passed'] = report.passes(t.min_recall, t.min_recall_ci, 0, t.max_p95_px)
    else:
        # Out-of-envelope runs are reported, never judged.
        summary['passed'] = None
        summary['out_of_spec'] = True
    write_report(args.out, 'teg', summary, detail)
    if config.plots:
        fig, ax = plt.subplots(figsize=(6, 4))
        plot_center_errors(detail, t.max_p95_px, ax=ax)
        _save_figure(fig, args.out / 'teg_center_errors.png')
        _plot_scene(scenes_dir / 'scene_0000', args.out / 'teg_scene_0000.png')
    return EXIT_FAILED if summary['passed'] is False else EXIT_OK


def cmd_calibrate(config: RunConfig, args: argparse.Namespace) -> int:
    world = TrueWorldModel.from_params(config.world)
    lattice, T, n_corrected = build_calibration(config, world, progress=args.progress)
    path = save_lattice(args.out / 'lattice.json', lattice, T)
    logger.info(f'wrote {path} (global fit rms {T.rms:.4f} mm, {n_corrected} nodes corrected)')
    return EXIT_OK


def cmd_eval_calib(config: RunConfig, args: argparse.Namespace) -> int:
    lattice, T = (load_lattice(args.lattice) if args.lattice else (None, None))
    result = run_calib_eval(config, lattice, T, progress=args.progress)
    for mode, errors in result.errors.items():
        write_report(args.out, f'calib_{mode}', result.summary[mode], errors)
    write_report(args.out, 'calib', result.summary)
    if config.plots:
        limit = config.calib.max_error
        fig, axes = plt.subplots(1, 3, figsize=(16, 4.5))
        plot_error_distributions(result.errors, limit, ax=axes[0])
        plot_error_field(result.errors['local'], 'xz', ax=axes[1])
        plot_region_max(result.summary['local']['by_region'], limit, ax=axes[2])
        _save_figure(fig, args.out / 'calib_errors.png')
    return EXIT_OK if result.passed else EXIT_FAILED


def cmd_simulate_unit(config: RunConfig, args: argparse.Namespace) -> int:
    bundle = load_models(args.models)
    lattice, T = _calibration(config, args)
    summary, detail = simulate_unit(config, bundle, lattice, T, progress=args.progress)
    write_report(args.out, 'unit', summary, detail)
    return EXIT_OK if summary['passed'] else EXIT_FAILED


COMMANDS = {
    'synth-dataset': (cmd_synth_dataset, 'render recall and precision training patches'),
    'train': (cmd_train, 'train the recall model and the precision ensemble'),
    'eval-teg': (cmd_eval_teg, 'detection recall/precision on synthetic gauge scenes'),
    'calibrate': (cmd_calibrate, 'collect the calibration lattice and fit the global map'),
    'eval-calib': (cmd_eval_calib, 'positioning error of local and global-only calibration'),
    'simulate-unit': (cmd_simulate_unit, 'Monte-Carlo unit completion rate'),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='JSON RunConfig; absent fields keep defaults')
    common.add_argument('--seed', type=int, help='overrides the config seed')
    common.add_argument('--out', type=Path, default=Path('.'), help='output directory')
    common.add_argument('--n-jobs', type=int, help='worker processes (-1 for all cores)')
    common.add_argument('--plots', action='store_true', help='write report figures')
    common.add_argument('--progress', action='store_true', help='show progress bars')
    common.add_argument('--models', type=Path, default=Path('models'),
                        help='directory written by `train`')
    common.add_argument('--dataset', type=Path, help='directory written by `synth-dataset`')
    common.add_argument('--lattice', type=Path, help='lattice.json written by `calibrate`')
    common.add_argument('--sample-scenes', type=int, default=3,
                        help='scene bundles written by `synth-dataset`')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')

    parser = argparse.ArgumentParser(prog='scrloc', description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest='command', required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_verbosity(DEBUG if args.verbose else WARNING if args.quiet else INFO)
    try:
        config = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        func, _ = COMMANDS[args.command]
        code = func(config, args)
    except (ScrlocError, ValueError, OSError) as e:
        logger.error(f'{args.command} failed: {type(e).__name__}: {e}')
        logger.debug('traceback', exc_info=True)
        return EXIT_ERROR
    except Exception:
        logger.exception(f'{args.command} failed unexpectedly')
        return EXIT_ERROR
    if code == EXIT_FAILED:
        logger.warning(f'{args.command}: acceptance threshold not met')
    return code


if __name__ == '__main__':
    sys.exit(main())
