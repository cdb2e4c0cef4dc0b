"""Adam with bias correction and a fixed learning rate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GnnParams, ShapeMismatch


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: GnnParams, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in params.h],
                   v=[np.zeros_like(a) for a in params.h], **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps_hat, self.step,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(params: GnnParams, grads: GnnParams, state: AdamState):
    """One Adam update.  Moments in ``state`` are updated in place.

    Returns ``(new_params, state)``; ``params`` itself is left untouched so
    forward tapes recorded against it stay identifiable as stale.
    """
    if not state.m:
        state.m = [np.zeros_like(a) for a in params.h]
        state.v = [np.zeros_like(a) for a in params.h]
    if len(grads.h) != len(params.h) or len(state.m) != len(params.h):
        raise ShapeMismatch("gradient/moment banks do not match parameters")
    for p, g, m in zip(params.h, grads.h, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new = []
    for p, g, m, v in zip(params.h, grads.h, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat))
    return GnnParams(params.config, new), state
