"""Run configuration for the command-line harness.

Every field has a default; JSON files only need the fields they change.
"""
import json
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Tuple, Type, Union
from scrloc.models.fcn.training import TrainingConfig
from scrloc.synth.world import WorldParams
from scrloc.tools.calib import WorkVolume
from scrloc.tools.detect import DetectParams


@dataclass(frozen=True)
class DatasetConfig:
    n_positive: int = 1500
    n_negative: int = 1500
    holdout: float = 0.2
    patch_size: int = 34


@dataclass(frozen=True)
class TegConfig:
    n_scenes: int = 60
    screws_per_scene: int = 20
    confusers_per_scene: int = 5
    width: int = 360
    height: int = 300
    in_spec: bool = True
    degraded: bool = True
    match_radius: float = 3.0
    min_recall: float = 0.995
    min_recall_ci: float = 0.99
    max_p95_px: float = 2.0


@dataclass(frozen=True)
class CalibConfig:
    volume: WorkVolume = WorkVolume()
    depth_window: int = 15
    max_missing: float = 0.01
    n_queries: int = 10000
    max_error: float = 0.35
    correct: bool = False
    correction_tol: float = 0.1


@dataclass(frozen=True)
class UnitConfig:
    n_units: int = 200
    screws_per_unit: int = 20
    confusers_per_unit: int = 0
    width: int = 360
    height: int = 300
    success_radius: float = 0.75
    match_radius: float = 3.0
    global_only: bool = False
    min_screw_rate: float = 0.995
    min_unit_rate: float = 0.90


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_jobs: int = 1
    plots: bool = False
    ensemble_size: int = 3
    recall_class_weights: Tuple[float, float] = (1.0, 2.0)
    precision_class_weights: Tuple[float, float] = (1.0, 1.0)
    detect: DetectParams = field(default_factory=DetectParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    world: WorldParams = field(default_factory=WorldParams)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    teg: TegConfig = field(default_factory=TegConfig)
    calib: CalibConfig = field(default_factory=CalibConfig)
    unit: UnitConfig = field(default_factory=UnitConfig)

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        return _build(cls, data)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> 'RunConfig':
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def _default(f) -> Any:
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _build(cls: Type, data: dict):
    if not isinstance(data, dict):
        raise ValueError(f'{cls.__name__} expects a JSON object, got {type(data).__name__}')
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f'unknown {cls.__name__} field {key!r}')
        default = _default(known[key])
        if is_dataclass(default):
            value = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)
