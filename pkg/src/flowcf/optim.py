"""Adam-style first-order optimizer used for model training and input search."""

from __future__ import annotations

import numpy as np

__all__ = ["AdamState", "adam_step", "Adam"]


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, shapes):
        self.m = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.v = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.t = 0


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g**2
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Convenience wrapper binding an AdamState to a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3):
        self.params = params
        self.lr = lr
        self.state = AdamState([p.shape for p in params])

    def step(self, grads: list[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state, self.lr)
