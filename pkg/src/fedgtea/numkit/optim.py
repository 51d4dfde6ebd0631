"""Adam with bias correction, in flat-vector and per-tensor forms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, lr: float = 1e-4, **kwargs) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), lr=lr, **kwargs)


def _adam_update(data: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grad * grad)
    denom = np.sqrt(state.v / (1.0 - state.beta2 ** state.t))
    denom += state.eps
    np.divide(state.m, denom, out=denom)
    denom *= state.lr / (1.0 - state.beta1 ** state.t)
    return data - denom


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update on a flat parameter vector."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"adam_step shapes disagree: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}")
    state.t += 1
    return _adam_update(params, grads, state)


class Adam:
    """Adam over a list of parameter tensors; missing grads count as zero."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.states = [
            AdamState.zeros_like(p.data, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            s.t += 1
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = _adam_update(p.data, grad, s)
