"""Minimal numpy neural toolkit: MLPs, reverse-mode gradients, masked softmax, Adam."""
from .autodiff import NonFiniteError, Tensor, backward
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import masked_log_softmax, masked_softmax
from .mlp import MLPShape, ParamStore, init_params, mlp_forward
from .optim import AdamState, adam_update, clip_grad_norm
from .rng import RngStream

__all__ = [
    "AdamState", "CheckpointError", "MLPShape", "NonFiniteError", "ParamStore", "RngStream", "Tensor",
    "adam_update", "backward", "clip_grad_norm", "init_params", "load_checkpoint", "masked_log_softmax",
    "masked_softmax", "mlp_forward", "save_checkpoint",
]
