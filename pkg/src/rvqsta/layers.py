"""Small differentiable building blocks with hand-written backward passes.

Arrays are laid out (B, T, features); context windows never cross the
boundary between two segments in a batch.
"""
from __future__ import annotations

import numpy as np


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(y: np.ndarray, kind: str) -> np.ndarray:
    """Derivative expressed through the activation's output ``y``."""
    if kind == "tanh":
        return 1.0 - y * y
    return np.ones_like(y)


def context_window(x: np.ndarray, radius: int) -> np.ndarray:
    """Concatenate each frame with its +-radius neighbours (zero padded).

    (B, T, D) -> (B, T, (2*radius + 1) * D), ordered from offset -radius
    to +radius.
    """
    if radius == 0:
        return x
    B, T, D = x.shape
    padded = np.zeros((B, T + 2 * radius, D))
    padded[:, radius:radius + T] = x
    return np.concatenate([padded[:, o:o + T] for o in range(2 * radius + 1)], axis=2)


def context_window_backward(g: np.ndarray, radius: int, D: int) -> np.ndarray:
    if radius == 0:
        return g
    B, T, _ = g.shape
    padded = np.zeros((B, T + 2 * radius, D))
    for o in range(2 * radius + 1):
        padded[:, o:o + T] += g[:, :, o * D:(o + 1) * D]
    return padded[:, radius:radius + T]


def init_dense(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0):
    w = rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


def mlp_forward(x, w1, b1, w2, b2, kind: str):
    """y = act(x w1 + b1) w2 + b2; returns (y, hidden)."""
    h = activate(x @ w1 + b1, kind)
    return h @ w2 + b2, h


def mlp_backward(gy, x, h, w1, w2, kind: str):
    """Returns (grad_x, gw1, gb1, gw2, gb2) for :func:`mlp_forward`."""
    def flat(a):
        return a.reshape(-1, a.shape[-1])

    gw2 = flat(h).T @ flat(gy)
    gb2 = flat(gy).sum(axis=0)
    gpre = (gy @ w2.T) * activation_grad(h, kind)
    gw1 = flat(x).T @ flat(gpre)
    gb1 = flat(gpre).sum(axis=0)
    return gpre @ w1.T, gw1, gb1, gw2, gb2
