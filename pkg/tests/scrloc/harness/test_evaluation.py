import json
import numpy as np
import pandas as pd
import pytest
from dataclasses import asdict, replace
from scrloc.errors import MissingModels
from scrloc.harness.evaluation import (
    build_calibration,
    generate_dataset,
    load_dataset,
    load_models,
    run_calib_eval,
    run_teg_eval,
    save_dataset,
    save_models,
    simulate_unit,
    train_models,
    write_report,
)
from scrloc.harness.config import RunConfig
from scrloc.io import load_detection_report, load_scene_bundle, read_pbm, read_pgm16
from scrloc.synth.world import TrueWorldModel


@pytest.fixture(scope='module')
def module_config():
    return RunConfig.from_dict({
        'seed': 7,
        'ensemble_size': 1,
        'dataset': {'n_positive': 8, 'n_negative': 8, 'holdout': 0.25},
        'training': {'batch_size': 8, 'epochs': 1, 'channels': [1, 4, 2]},
        'calib': {'volume': {'origin': [300.0, 100.0, 250.0], 'extents': [200.0, 200.0, 200.0],
                             'spacing': 50.0},
                  'n_queries': 200},
        'unit': {'n_units': 2, 'screws_per_unit': 2, 'width': 160, 'height': 120},
    })


@pytest.fixture(scope='module')
def calibration(module_config):
    world = TrueWorldModel.from_params(module_config.world)
    lattice, T, _ = build_calibration(module_config, world)
    return lattice, T


class TestDatasets:

    def test_generate(self, small_config):
        patches = generate_dataset(small_config, 'recall')
        assert len(patches) == 16
        assert all(p.label.any() for p in patches[:8])
        assert not any(p.label.any() for p in patches[8:])
        assert patches[0].image.shape == (34, 34)

    def test_seeded(self, small_config):
        a = generate_dataset(small_config, 'precision')
        b = generate_dataset(small_config, 'precision')
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.image, pb.image)
        c = generate_dataset(replace(small_config, seed=8), 'precision')
        assert not np.array_equal(a[0].image, c[0].image)

    def test_unknown_kind(self, small_config):
        with pytest.raises(ValueError):
            generate_dataset(small_config, 'both')

    def test_save_load(self, tmp_path, toy_patches):
        path = save_dataset(tmp_path / 'recall.npz', toy_patches, {'kind': 'recall'})
        manifest = json.loads(path.with_suffix('.json').read_text())
        assert manifest == {'kind': 'recall', 'n': 24, 'n_positive': 12, 'shape': [34, 34]}
        loaded = load_dataset(path)
        assert len(loaded) == 24
        for a, b in zip(toy_patches, loaded):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.label, b.label)


class TestModels:

    def test_train_and_reload(self, tmp_path, small_config):
        recall = generate_dataset(small_config, 'recall')
        precision = generate_dataset(small_config, 'precision')
        bundle = train_models(small_config, recall, precision)
        assert len(bundle.ensemble) == 1
        assert set(bundle.metrics) == {'recall_accuracy', 'precision_0_accuracy'}
        assert bundle.recall.meta['training']['class_weights'] == (1.0, 2.0)
        assert bundle.ensemble[0].meta['training']['seed'] == small_config.seed + 1

        save_models(bundle, tmp_path / 'models')
        loaded = load_models(tmp_path / 'models')
        assert loaded.digests() == bundle.digests()
        assert loaded.metrics == pytest.approx(bundle.metrics)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(MissingModels):
            load_models(tmp_path / 'nothing')

    def test_missing_member(self, tmp_path, zero_bundle):
        save_models(zero_bundle, tmp_path)
        (tmp_path / 'precision_0.sfcn').unlink()
        with pytest.raises(MissingModels):
            load_models(tmp_path)


class TestTeg:

    def test_flat_models_find_nothing(self, small_config, zero_bundle):
        report, detail = run_teg_eval(small_config, zero_bundle)
        assert (report.tp, report.fn, report.fp) == (0, 6, 0)
        assert report.recall == 0.0
        assert report.precision_undefined
        assert report.n_confusers == 2
        assert report.synthetic_negatives
        assert report.model_digests == zero_bundle.digests()
        assert list(detail['kind'].unique()) == ['screw']
        assert sorted(detail['scene'].unique()) == [0, 1]
        assert not report.passes()


    def test_scene_reports(self, tmp_path, small_config, zero_bundle):
        run_teg_eval(small_config, zero_bundle, scenes_dir=tmp_path)
        for index in range(2):
            scene_dir = tmp_path / f'scene_{index:04d}'
            report = load_detection_report(scene_dir / 'detections.json')
            assert report['scene'] == index and report['seed'] == 7
            assert report['model_digests'] == zero_bundle.digests()
            assert report['params'] == asdict(small_config.detect)
            assert report['params']['verify_fraction'] == 0.15
            assert [d['drop_reason'] for d in report['detections']] == ['rejected']
            entry = report['detections'][0]
            assert set(entry) == {'p_global', 'p_3d', 'confidence', 'box', 'drop_reason'}
            assert entry['box'] == {'x': 0, 'y': 0, 'w': 160, 'h': 120}
            img, truth = load_scene_bundle(scene_dir)
            assert img.rgb.shape == (120, 160, 3) and len(truth) == 3
            assert read_pbm(scene_dir / 'coarse_mask.pbm').all()
            np.testing.assert_allclose(read_pgm16(scene_dir / 'recall_pmap.pgm'), 0.5,
                                       atol=1 / 65535)
    def test_needs_models(self, small_config):
        with pytest.raises(MissingModels):
            run_teg_eval(small_config, None)


class TestCalibration:

    def test_eval(self, module_config, calibration):
        lattice, T = calibration
        result = run_calib_eval(module_config, lattice, T)
        s = result.summary
        assert set(result.errors) == {'local', 'global'}
        assert len(result.errors['local']) == 200
        assert s['local']['n_failed'] == 0
        assert s['local']['rms'] < s['global']['rms']
        assert s['lattice_digest'] == lattice.digest()
        assert s['world_digest'] == lattice.world_digest
        assert result.passed == (s['local']['max'] <= 0.35)

    def test_fits_missing_global_map(self, module_config, calibration):
        lattice, T = calibration
        result = run_calib_eval(module_config, lattice)
        np.testing.assert_allclose(result.global_map.matrix, T.matrix)

    def test_correction_pass(self, module_config):
        config = replace(module_config, calib=replace(module_config.calib, correct=True,
                                                      correction_tol=0.0))
        world = TrueWorldModel.from_params(config.world)
        lattice, _, n = build_calibration(config, world)
        assert n == 27
        assert np.any(lattice.corrections != 0)


class TestUnits:

    def test_flat_models_fail_every_unit(self, module_config, zero_bundle, calibration):
        summary, detail = simulate_unit(module_config, zero_bundle, *calibration)
        assert len(detail) == 4
        assert not detail['detected'].any()
        assert np.isinf(detail['error_local']).all()
        assert summary['local']['screw_rate'] == 0.0
        assert summary['local']['unit_rate'] == 0.0
        assert summary['mode'] == 'local'
        assert not summary['passed']

    def test_units_without_screws_succeed(self, module_config, zero_bundle, calibration):
        config = replace(module_config, unit=replace(module_config.unit, screws_per_unit=0,
                                                     global_only=True))
        summary, detail = simulate_unit(config, zero_bundle, *calibration)
        assert detail.empty
        assert summary['mode'] == 'global'
        assert summary['global']['unit_rate'] == 1.0
        assert summary['global']['predicted_unit_rate'] == 1.0
        assert summary['passed']

    def test_needs_models(self, module_config, calibration):
        with pytest.raises(MissingModels):
            simulate_unit(module_config, None, *calibration)


class TestReports:

    def test_write(self, tmp_path):
        summary = {'rate': np.float64(0.5), 'n': np.int64(3), 'worst': float('inf'),
                   'ci': (0.1, 0.9), 'by_region': {'x+y+z+': np.float64(0.2)}}
        detail = pd.DataFrame({'a': [1, 2], 'b': [0.5, np.nan]})
        path = write_report(tmp_path / 'out', 'teg', summary, detail)
        assert path.name == 'teg_summary.json'
        data = json.loads(path.read_text())
        assert data == {'rate': 0.5, 'n': 3, 'worst': None, 'ci': [0.1, 0.9],
                        'by_region': {'x+y+z+': 0.2}}
        assert len(pd.read_csv(tmp_path / 'out' / 'teg_detail.csv')) == 2

    def test_summary_only(self, tmp_path):
        write_report(tmp_path, 'calib', {'passed': True})
        assert not (tmp_path / 'calib_detail.csv').exists()
