"""Dense networks, optimizer and training loops implemented directly on numpy."""

from .model_io import MAGIC, ModelFormatError, load_model, save_model
from .network import (
    AdamState,
    DenseLayer,
    LayerSpec,
    Network,
    NonFiniteGradient,
    ShapeMismatch,
    adam_step,
    mse_loss,
    multitask_network,
    multitouch_network,
    sigmoid_xent_loss,
)
from .training import (
    EmptyAfterFilter,
    EmptyDataset,
    MultitaskModel,
    MultitouchModel,
    Standardizer,
    TrainHistory,
    TrainSchedule,
    minibatches,
    train_multitask,
    train_multitouch,
)

__all__ = [
    "MAGIC",
    "ModelFormatError",
    "load_model",
    "save_model",
    "AdamState",
    "DenseLayer",
    "LayerSpec",
    "Network",
    "NonFiniteGradient",
    "ShapeMismatch",
    "adam_step",
    "mse_loss",
    "multitask_network",
    "multitouch_network",
    "sigmoid_xent_loss",
    "EmptyAfterFilter",
    "EmptyDataset",
    "MultitaskModel",
    "MultitouchModel",
    "Standardizer",
    "TrainHistory",
    "TrainSchedule",
    "minibatches",
    "train_multitask",
    "train_multitouch",
]
