from clar.autodiff.checkpoint import CheckpointError, load_params, save_params
from clar.autodiff.nn import Conv1d, Dense, Module
from clar.autodiff.optim import Adam, adam_step
from clar.autodiff.tensor import (
    Parameter,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
)
from clar.autodiff import tensor as ops

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv1d",
    "Dense",
    "Module",
    "Parameter",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "adam_step",
    "backward",
    "load_params",
    "ops",
    "save_params",
]
