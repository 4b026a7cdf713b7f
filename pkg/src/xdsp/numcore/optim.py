"""Adam and global-norm gradient clipping over name -> array mappings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ContractError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params, **hyper):
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def global_norm(grads):
    # fixed order: sorted parameter names, then row-major entries
    total = 0.0
    for name in sorted(grads):
        g = np.asarray(grads[name]).reshape(-1)
        total += float(np.dot(g, g))
    return math.sqrt(total)


def clip_global_norm(grads, cap):
    """Scale every gradient by ``cap / norm`` when the global L2 norm exceeds ``cap``.

    Returns ``(clipped, norm_before)``.
    """
    if not cap > 0:
        raise ContractError(f"clip cap must be positive, got {cap}")
    norm = global_norm(grads)
    if norm <= cap:
        return dict(grads), norm
    scale = cap / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Inputs are not modified."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError("adam_step: parameter, gradient and state keys differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ContractError(
                f"adam_step: shape mismatch for {name}: param {p.shape}, grad {g.shape}, "
                f"moment {state.m[name].shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(lr=state.lr, beta1=b1, beta2=b2, eps=state.eps, t=t, m=new_m, v=new_v)
    return new_params, new_state
