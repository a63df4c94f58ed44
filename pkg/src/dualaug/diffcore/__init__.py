"""Self-contained reverse-mode differentiation, MLPs, and optimizers."""

from . import tape
from .nets import MlpSpec, ParamStore, init_params, mlp_forward, param_gradient
from .optim import Optimized, OptimizerState, optimizer_step
from .tape import Node, Tape, backward, grad_norm, raw

__all__ = [
    "tape",
    "Node",
    "Tape",
    "backward",
    "grad_norm",
    "raw",
    "MlpSpec",
    "ParamStore",
    "init_params",
    "mlp_forward",
    "param_gradient",
    "Optimized",
    "OptimizerState",
    "optimizer_step",
]
