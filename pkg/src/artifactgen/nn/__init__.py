"""Reverse-mode autodiff engine, layers, optimizers and checkpointing."""

from .tensor import (
    Tensor,
    backward,
    concat,
    fold1d,
    gather_rows,
    grad,
    input_gradient,
    leaky_relu,
    matmul,
    no_grad,
    silu,
    unfold1d,
)
from .layers import (
    Conv1d,
    ConvTranspose1d,
    Embedding,
    GroupNorm,
    Linear,
    Module,
    film,
    global_avg_pool1d,
)
from .optim import Adam, AdamW, EmaShadow
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "backward", "grad", "input_gradient", "no_grad",
    "concat", "matmul", "leaky_relu", "silu", "unfold1d", "fold1d", "gather_rows",
    "Module", "Linear", "Conv1d", "ConvTranspose1d", "Embedding", "GroupNorm",
    "film", "global_avg_pool1d",
    "Adam", "AdamW", "EmaShadow",
    "Checkpoint", "save_checkpoint", "load_checkpoint",
]
