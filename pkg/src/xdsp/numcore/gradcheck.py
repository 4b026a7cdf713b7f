"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from ..exceptions import ContractError, DeterminismError
from .tensor import Tape, Tensor, backward


def _evaluate(f, theta):
    params = {k: Tensor(v, name=k) for k, v in theta.items()}
    out = f(params)
    if out.data.size != 1:
        raise ContractError(f"objective must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(()))


def grad_check(f, theta, eps=1e-5, return_details=False):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a dict of named Tensors to a scalar Tensor; ``theta`` maps the
    same names to float64 arrays. The relative error of one coordinate is
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)``.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    theta = {k: np.array(v, dtype=np.float64) for k, v in theta.items()}
    f0 = _evaluate(f, theta)
    if _evaluate(f, theta) != f0:
        raise DeterminismError("objective returned different values for identical parameters")

    params = {k: Tensor(v, name=k, requires_grad=True) for k, v in theta.items()}
    with Tape() as tape:
        loss = f(params)
    analytic = backward(tape, loss, params)

    worst = 0.0
    per_param = {}
    for name, value in theta.items():
        flat = value.reshape(-1)
        g_ad = analytic[name].reshape(-1)
        errs = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _evaluate(f, theta)
            flat[i] = orig - eps
            down = _evaluate(f, theta)
            flat[i] = orig
            g_fd = (up - down) / (2.0 * eps)
            denom = max(abs(g_ad[i]), abs(g_fd), 1e-8)
            errs[i] = abs(g_ad[i] - g_fd) / denom
        per_param[name] = float(errs.max()) if errs.size else 0.0
        worst = max(worst, per_param[name])
    if return_details:
        return worst, per_param
    return worst
