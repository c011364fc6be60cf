"""Adam with bias correction, and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.param = name


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Parameters without an entry in ``grads`` are left untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        denom = np.divide(v, bc2, out=tmp)
        np.sqrt(denom, out=denom)
        denom += state.eps
        upd = m / bc1
        upd *= lr
        upd /= denom
        p -= upd
    return params, state


def step_decay_lr(base: float, epoch: int, factor: float = 0.1, every: int = 20) -> float:
    return base * factor ** (epoch // every)
