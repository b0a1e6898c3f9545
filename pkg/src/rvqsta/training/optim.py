"""Adam without weight decay, and a linear-warmup cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core.types import RvqStaError, ShapeError


class NonFiniteError(RvqStaError, FloatingPointError):
    pass


def cosine_lr(step: int, base_lr: float, warmup: int, total: int) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if warmup >= total:
        raise ValueError(f"warmup ({warmup}) must be < total ({total})")
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, moments: AdamState, lr: float,
              beta1: float = 0.5, beta2: float = 0.9, eps: float = 1e-8):
    """One bias-corrected Adam update on the parameters named in ``grads``.

    Returns new (params, moments); inputs are not modified. Parameters absent
    from ``grads`` are carried over unchanged.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    t = moments.t + 1
    new_p, new_m, new_v = dict(params), dict(moments.m), dict(moments.v)
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")
        m = beta1 * moments.m[name] + (1.0 - beta1) * g
        v = beta2 * moments.v[name] + (1.0 - beta2) * g * g
        new_m[name], new_v[name] = m, v
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new_p, AdamState(new_m, new_v, t)
