"""Adam and AdamW over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import LengthError
from .nets import ParamStore


@dataclass
class OptimizerState:
    """Moment buffers and step counter for one parameter store."""

    kind: str  # "adam" | "adamw"
    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01  # adamw only

    @staticmethod
    def adam(size: int, lr: float) -> "OptimizerState":
        return OptimizerState("adam", lr, np.zeros(size), np.zeros(size))

    @staticmethod
    def adamw(size: int, lr: float, weight_decay: float = 0.01) -> "OptimizerState":
        return OptimizerState(
            "adamw", lr, np.zeros(size), np.zeros(size), weight_decay=weight_decay
        )


def optimizer_step(state: OptimizerState, params: ParamStore, grads: np.ndarray) -> ParamStore:
    """One bias-corrected Adam/AdamW update, in place; returns the store."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape or state.m.shape != params.values.shape:
        raise LengthError(
            f"gradient length {grads.size} vs params {params.values.size} "
            f"vs moments {state.m.size}"
        )
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**t)
    v_hat = state.v / (1.0 - state.beta2**t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.kind == "adamw":
        update = update + state.lr * state.weight_decay * params.values
    params.values -= update
    return params


@dataclass
class Optimized:
    """A ParamStore paired with its optimizer state."""

    store: ParamStore
    opt: OptimizerState

    def apply(self, grads: np.ndarray) -> None:
        optimizer_step(self.opt, self.store, grads)
