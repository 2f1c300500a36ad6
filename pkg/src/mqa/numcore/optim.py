"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mqa.errors import DimensionError
from mqa.numcore.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> tuple[list[np.ndarray], AdamState]:
    """Return updated copies of ``params`` and the advanced optimizer state."""
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
    else:
        if len(state.m) != len(params):
            raise DimensionError("optimizer state does not match parameter list")
        m, v = state.m, state.v
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape or mi.shape != p.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        mi = b1 * mi + (1.0 - b1) * g
        vi = b2 * vi + (1.0 - b2) * (g * g)
        new_params.append(p - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.epsilon))
        new_m.append(mi)
        new_v.append(vi)
    return new_params, AdamState(state.lr, b1, b2, state.epsilon, step, new_m, new_v)


class Adam:
    """Stateful wrapper that applies :func:`adam_step` to live tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, epsilon)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, self.state = adam_step(self.state, [p.data for p in self.params], grads)
        for p, value in zip(self.params, new):
            p.data = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
