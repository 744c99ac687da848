from scrloc.harness.config import (
    RunConfig,
    DatasetConfig,
    TegConfig,
    CalibConfig,
    UnitConfig,
)
from scrloc.harness.evaluation import (
    ModelBundle,
    generate_dataset,
    train_models,
    run_teg_eval,
    run_calib_eval,
    simulate_unit,
    write_report,
)

__all__ = [
    "RunConfig",
    "DatasetConfig",
    "TegConfig",
    "CalibConfig",
    "UnitConfig",
    "ModelBundle",
    "generate_dataset",
    "train_models",
    "run_teg_eval",
    "run_calib_eval",
    "simulate_unit",
    "write_report",
]
