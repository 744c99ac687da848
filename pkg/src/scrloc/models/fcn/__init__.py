from scrloc.models.fcn.network import (
    FcnModel,
    LabeledPatch,
    forward,
    forward_batch,
    loss_and_grad,
    gradient_check,
    save_model,
    load_model,
)
from scrloc.models.fcn.training import (
    TrainingConfig,
    lr_at,
    train,
    make_ensemble,
    pixel_accuracy,
)

__all__ = [
    "FcnModel",
    "LabeledPatch",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "gradient_check",
    "save_model",
    "load_model",
    "TrainingConfig",
    "lr_at",
    "train",
    "make_ensemble",
    "pixel_accuracy",
]
