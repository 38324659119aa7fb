"""Adam with bias correction and a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def cosine_lr(epoch: float, total_epochs: float, lr0: float) -> float:
    """``lr0 * (1 + cos(pi * epoch / total_epochs)) / 2``."""
    if total_epochs <= 0:
        raise ValueError("total_epochs must be positive")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> tuple[dict, AdamState]:
    """One Adam update on plain arrays; returns new params and the (mutated) state."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return new, state


class Adam:
    """Adam over a dict of parameter tensors, updated in place."""

    def __init__(self, params: dict):
        self.params = params
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        new, self.state = adam_step(arrays, grads, self.state, lr)
        for k, p in self.params.items():
            p.data = new[k]
