"""Float64 tensors with reverse-mode gradients, layers, Adam and checkpoints."""

from mqa.numcore import ops
from mqa.numcore.checkpoint import load_checkpoint, save_checkpoint
from mqa.numcore.flops import FlopCounter, flop_scope
from mqa.numcore.gradcheck import numerical_gradient, relative_error
from mqa.numcore.nn import Conv1d, Dense, LayerNorm, Module
from mqa.numcore.optim import Adam, AdamState, adam_step
from mqa.numcore.tensor import Tensor, backward, no_grad, topological_order

__all__ = [
    "Adam", "AdamState", "Conv1d", "Dense", "FlopCounter", "LayerNorm", "Module", "Tensor",
    "adam_step", "backward", "flop_scope", "load_checkpoint", "no_grad", "numerical_gradient",
    "ops", "relative_error", "save_checkpoint", "topological_order",
]
