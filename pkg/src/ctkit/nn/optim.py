"""SGD and ADAM updates applied in place to lists of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def sgd_step(params, grads, lr: float) -> None:
    for p, g in zip(params, grads):
        p -= np.asarray(lr * g, dtype=p.dtype)


@dataclass
class AdamState:
    """Per-parameter moment estimates and the shared step counter.

    ``fixed_bias`` divides the moments by ``1 - beta`` instead of
    ``1 - beta**n``; both agree at the first step.
    """

    lr: float = 1e-3
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    fixed_bias: bool = False
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    n: int = 0

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif [m.shape for m in self.m] != [p.shape for p in params]:
            raise ValueError("ADAM state does not match the parameter shapes")


def adam_step(state: AdamState, params, grads) -> None:
    """One ADAM update; ``eps`` sits inside the square root."""
    state.ensure(params)
    state.n += 1
    b1, b2 = state.beta1, state.beta2
    if state.fixed_bias:
        c1, c2 = 1.0 - b1, 1.0 - b2
    else:
        c1, c2 = 1.0 - b1**state.n, 1.0 - b2**state.n
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / np.sqrt(v_hat + state.eps)).astype(p.dtype, copy=False)
