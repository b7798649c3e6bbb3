"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError
from .tensor import Tensor


@dataclass
class AdamWState:
    """Moment estimates and hyperparameters for one parameter array."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.025
    step: int = 0
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState):
    """One decoupled-weight-decay Adam update; mutates param and state in place.

    Decay is applied to the parameter directly (not through the gradient), so
    a zero gradient still shrinks the parameter by ``lr * weight_decay``.
    """
    if param.shape != grad.shape:
        raise DimensionError("adamw_step: param/grad shapes differ")
    if not np.all(np.isfinite(grad)):
        raise NumericError("adamw_step: non-finite gradient")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.step += 1
    state.m += (1.0 - state.beta1) * (grad - state.m)
    state.v += (1.0 - state.beta2) * (grad * grad - state.v)
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    param -= state.lr * state.weight_decay * param
    param -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return param, state


class AdamW:
    """Tracks one AdamWState per named parameter tensor."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.025):
        self.params = params
        self.lr = lr
        self.states: dict[str, AdamWState] = {
            name: AdamWState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                             weight_decay=weight_decay)
            for name in params
        }

    def set_lr(self, lr: float):
        self.lr = lr
        for s in self.states.values():
            s.lr = lr

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adamw_step(p.data, p.grad, self.states[name])

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
