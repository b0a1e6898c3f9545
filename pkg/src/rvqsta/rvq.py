"""Vector quantization kernels: nearest-entry VQ, residual VQ, and residual VQ
whose first layer takes externally supplied (semantic) token indices.

Evaluation order is fixed so the telescoping identity holds bit-exactly::

    r_0 = z;  r_i = r_{i-1} - zhat_i          (final_residual = r_Nq)
    summed = ((zhat_1 + zhat_2) + zhat_3) + ...
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.types import (
    Codebook,
    CodebookStack,
    LatentSequence,
    ShapeError,
    TokenRangeError,
    TokenSequence,
)

_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class QuantizationOutput:
    codes: np.ndarray          # (N_q, T) int64
    layer_q: np.ndarray        # (N_q, T, D)
    summed: np.ndarray         # (T, D)
    final_residual: np.ndarray  # (T, D)

    @property
    def num_layers(self) -> int:
        return self.codes.shape[0]

    def residuals(self, z) -> np.ndarray:
        """(N_q + 1, T, D) stack r_0 = z, r_1, ..., r_Nq, same order as encoding."""
        r = [_latent(z)]
        for q in self.layer_q:
            r.append(r[-1] - q)
        return np.stack(r)


def squared_distances(points: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """(N, K) matrix of sum((x - c)^2); the difference form keeps exact ties exact."""
    n = points.shape[0]
    out = np.empty((n, entries.shape[0]))
    for lo in range(0, n, _CHUNK):
        diff = points[lo:lo + _CHUNK, None, :] - entries[None, :, :]
        out[lo:lo + _CHUNK] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def nearest_entries(points: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Row-wise argmin index; ties go to the lowest index."""
    return np.argmin(squared_distances(points, entries), axis=1)


def _latent(z) -> np.ndarray:
    if isinstance(z, LatentSequence):
        return z.frames
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"latent frames must be a (T, D) matrix, got shape {arr.shape}")
    return arr


def _layers(stack) -> list[np.ndarray]:
    if isinstance(stack, CodebookStack):
        return stack.arrays()
    if isinstance(stack, Codebook):
        return [stack.entries]
    layers = [np.asarray(c, dtype=np.float64) for c in stack]
    if not layers:
        raise ShapeError("codebook stack is empty")
    return layers


def _check_dim(z: np.ndarray, layers: Sequence[np.ndarray]) -> None:
    for i, cb in enumerate(layers):
        if cb.ndim != 2 or cb.shape[0] < 1:
            raise ShapeError(f"layer {i}: empty or malformed codebook, shape {cb.shape}")
        if cb.shape[1] != z.shape[1]:
            raise ShapeError(
                f"dimension mismatch: z has D={z.shape[1]}, codebook layer {i} has D={cb.shape[1]}"
            )


def vq_nearest(r, cb) -> tuple[int, np.ndarray]:
    entries = cb.entries if isinstance(cb, Codebook) else np.asarray(cb, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if entries.ndim != 2 or entries.shape[0] == 0:
        raise ShapeError("empty codebook")
    if entries.shape[1] != r.size:
        raise ShapeError(f"dimension mismatch: vector has D={r.size}, codebook has D={entries.shape[1]}")
    idx = int(nearest_entries(r[None, :], entries)[0])
    return idx, entries[idx].copy()


def _finish(z, first_codes, first_q, rest: Sequence[np.ndarray]) -> QuantizationOutput:
    T, D = z.shape
    n_q = 1 + len(rest)
    codes = np.empty((n_q, T), dtype=np.int64)
    layer_q = np.empty((n_q, T, D))
    codes[0], layer_q[0] = first_codes, first_q
    r = z - first_q
    for i, cb in enumerate(rest, start=1):
        idx = nearest_entries(r, cb)
        codes[i], layer_q[i] = idx, cb[idx]
        r = r - layer_q[i]
    summed = layer_q[0].copy()
    for i in range(1, n_q):
        summed = summed + layer_q[i]
    return QuantizationOutput(codes, layer_q, summed, r)


def rvq_encode(z, stack) -> QuantizationOutput:
    """Standard residual VQ: every layer picks its nearest entry."""
    z = _latent(z)
    layers = _layers(stack)
    _check_dim(z, layers)
    idx = nearest_entries(z, layers[0])
    return _finish(z, idx, layers[0][idx], layers[1:])


def _token_array(tokens) -> tuple[np.ndarray, int | None]:
    if isinstance(tokens, TokenSequence):
        return tokens.tokens, tokens.vocab
    return np.asarray(tokens, dtype=np.int64).reshape(-1), None


def rvq_sta_encode(z, semantic_tokens, stack) -> QuantizationOutput:
    """Residual VQ with the first layer's indices assigned from ``semantic_tokens``.

    Layer 1 performs no search: its output is ``first_codebook[token_t]``. Layers
    2..N_q quantize the residual ``z - first_codebook[tokens]`` as in :func:`rvq_encode`.
    """
    z = _latent(z)
    layers = _layers(stack)
    _check_dim(z, layers)
    tokens, vocab = _token_array(semantic_tokens)
    K1 = layers[0].shape[0]
    if tokens.size != z.shape[0]:
        raise ShapeError(f"length mismatch: {tokens.size} tokens for {z.shape[0]} frames")
    if vocab is not None and vocab > K1:
        raise TokenRangeError(f"token vocabulary {vocab} exceeds first-layer codebook size {K1}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= K1):
        bad = int(tokens[(tokens < 0) | (tokens >= K1)][0])
        raise TokenRangeError(f"token out of range: {bad} not in [0, {K1})")
    return _finish(z, tokens.copy(), layers[0][tokens], layers[1:])


def decode_array(codes, stack) -> np.ndarray:
    layers = _layers(stack)
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[0] != len(layers):
        raise ShapeError(f"codes must have shape ({len(layers)}, T), got {codes.shape}")
    for i, cb in enumerate(layers):
        row = codes[i]
        if row.size and (row.min() < 0 or row.max() >= cb.shape[0]):
            bad = int(row[(row < 0) | (row >= cb.shape[0])][0])
            raise TokenRangeError(f"layer {i}: code out of range: {bad} not in [0, {cb.shape[0]})")
    out = layers[0][codes[0]].copy()
    for i in range(1, len(layers)):
        out = out + layers[i][codes[i]]
    return out


def rvq_decode(codes, stack) -> LatentSequence:
    return LatentSequence(decode_array(codes, stack))


def vq_losses(z, out: QuantizationOutput) -> tuple[float, float]:
    """(codebook_loss, commitment_loss), both mean over frames of |z_t - zhat_t|^2.

    The two are equal in value; they differ only in which side is treated as
    constant when differentiating (entries vs. encoder output).
    """
    z = _latent(z)
    if z.shape != out.summed.shape:
        raise ShapeError(f"shape mismatch: z {z.shape} vs quantized {out.summed.shape}")
    diff = z - out.summed
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    return loss, loss
