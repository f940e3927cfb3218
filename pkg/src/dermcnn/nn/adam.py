"""Adam optimizer with bias-corrected first and second moments.

Update (per tensor):
    t <- t + 1
    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch

ParamsLike = list[dict[str, np.ndarray]]


@dataclass
class AdamState:
    t: int = 0
    m: ParamsLike = field(default_factory=list)
    v: ParamsLike = field(default_factory=list)
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ParamsLike, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = lambda entry: {k: np.zeros_like(a) for k, a in entry.items()}
    return AdamState(t=0, m=[zeros(e) for e in params], v=[zeros(e) for e in params],
                     lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: ParamsLike, grads: ParamsLike, state: AdamState) -> tuple[ParamsLike, AdamState]:
    """One optimizer step; pure, returns fresh parameter and state structures."""
    if len(grads) != len(params):
        raise ShapeMismatch(f"{len(grads)} gradient entries for {len(params)} parameter entries")
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params: ParamsLike = []
    new_m: ParamsLike = []
    new_v: ParamsLike = []
    for i, entry in enumerate(params):
        pe: dict[str, np.ndarray] = {}
        me: dict[str, np.ndarray] = {}
        ve: dict[str, np.ndarray] = {}
        for name, theta in entry.items():
            g = grads[i].get(name)
            if g is None or g.shape != theta.shape:
                raise ShapeMismatch(
                    f"layer {i} {name!r}: gradient shape "
                    f"{None if g is None else g.shape} vs parameter {theta.shape}"
                )
            g = g.astype(theta.dtype, copy=False)
            m = state.beta1 * state.m[i][name] + (1.0 - state.beta1) * g
            v = state.beta2 * state.v[i][name] + (1.0 - state.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            pe[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
            me[name] = m
            ve[name] = v
        new_params.append(pe)
        new_m.append(me)
        new_v.append(ve)
    new_state = AdamState(t=t, m=new_m, v=new_v, lr=state.lr, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps)
    return new_params, new_state
