from .adam import AdamState, adam_step, init_adam
from .model import backward, forward, init_params, predict_proba
from .spec import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    ModelSpec,
    ReLU,
    SigmoidHead,
    default_spec,
    format_spec,
    parse_spec,
)

__all__ = [
    "AdamState",
    "adam_step",
    "init_adam",
    "backward",
    "forward",
    "init_params",
    "predict_proba",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "MaxPool2D",
    "ModelSpec",
    "ReLU",
    "SigmoidHead",
    "default_spec",
    "format_spec",
    "parse_spec",
]
