import matplotlib
matplotlib.use('Agg')

import numpy as np
import pytest
from scrloc.harness.config import RunConfig
from scrloc.harness.evaluation import ModelBundle, generate_dataset, train_models
from scrloc.models.fcn.network import FcnModel
from scrloc.models.fcn.training import TrainingConfig, train
from scrloc.synth.scene import random_screw_spec, render_patch
from scrloc.synth.world import TrueWorldModel, WorldParams
from scrloc.tools.calib import WorkVolume


@pytest.fixture(scope='session')
def world():
    return TrueWorldModel.from_params(WorldParams())


@pytest.fixture(scope='session')
def affine_world():
    return TrueWorldModel.from_params(WorldParams.affine_only())


@pytest.fixture(scope='session')
def small_volume():
    """5x5x5 nodes around the middle of the default cell."""
    return WorkVolume(origin=(300.0, 100.0, 250.0), extents=(200.0, 200.0, 200.0), spacing=50.0)


@pytest.fixture
def rng():
    return np.random.default_rng(585)


@pytest.fixture(scope='session')
def toy_patches():
    patches = []
    for i in range(24):
        spec = random_screw_spec(np.random.default_rng(i), in_spec=True)
        patches.append(render_patch(spec, positive=i % 2 == 0, seed=1000 + i))
    return patches


@pytest.fixture(scope='session')
def tiny_model(toy_patches):
    config = TrainingConfig(batch_size=8, epochs=2, channels=(1, 4, 4, 2), seed=3)
    model, _ = train(config, toy_patches)
    return model


@pytest.fixture(scope='session')
def zero_bundle():
    """Untrained models: every pixel scores 0.5, so stage 2 (tau_fine 0.6) accepts nothing."""
    return ModelBundle(FcnModel.zeros(), [FcnModel.zeros()])


@pytest.fixture
def small_config(small_volume):
    return RunConfig.from_dict({
        'seed': 7,
        'ensemble_size': 1,
        'dataset': {'n_positive': 8, 'n_negative': 8, 'holdout': 0.25},
        'training': {'batch_size': 8, 'epochs': 1, 'channels': [1, 4, 2]},
        'teg': {'n_scenes': 2, 'screws_per_scene': 3, 'confusers_per_scene': 1,
                'width': 160, 'height': 120},
        'calib': {'volume': {'origin': list(small_volume.origin),
                             'extents': list(small_volume.extents),
                             'spacing': small_volume.spacing},
                  'n_queries': 200},
        'unit': {'n_units': 2, 'screws_per_unit': 2, 'width': 160, 'height': 120},
    })


@pytest.fixture(scope='session')
def trained_bundle():
    """Recall model and precision ensemble trained on the default configuration.

    Only slow tests ask for it; it is built once per session.
    """
    config = RunConfig(n_jobs=-1)
    recall = generate_dataset(config, 'recall')
    precision = generate_dataset(config, 'precision')
    return train_models(config, recall, precision)
