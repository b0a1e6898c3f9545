"""Value types shared across the toolkit.

Arrays held by these types are converted to float64 (or int64 for tokens)
and marked read-only, so instances can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class RvqStaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RvqStaError, ValueError):
    pass


class TokenRangeError(RvqStaError, ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: both dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name}: contains non-finite values")
    return _frozen(arr)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """T x D_in matrix of feature frames."""

    frames: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_matrix(self.frames, "FeatureSequence"))

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        return isinstance(other, FeatureSequence) and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True, eq=False)
class LatentSequence(FeatureSequence):
    """T x D latent frames (z, quantized z, residuals)."""

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_matrix(self.frames, "LatentSequence"))


@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: np.ndarray
    vocab: int

    def __post_init__(self):
        arr = np.array(self.tokens, dtype=np.int64).reshape(-1)
        if self.vocab < 1:
            raise TokenRangeError(f"vocab must be >= 1, got {self.vocab}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.vocab):
            bad = int(arr[(arr < 0) | (arr >= self.vocab)][0])
            raise TokenRangeError(f"token out of range: {bad} not in [0, {self.vocab})")
        object.__setattr__(self, "tokens", _frozen(arr))
        object.__setattr__(self, "vocab", int(self.vocab))

    def __len__(self) -> int:
        return self.tokens.size

    def __eq__(self, other):
        return (
            isinstance(other, TokenSequence)
            and self.vocab == other.vocab
            and np.array_equal(self.tokens, other.tokens)
        )


@dataclass(frozen=True, eq=False)
class Codebook:
    """K x D table of quantizer entries."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries, "Codebook"))

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def D(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class CodebookStack:
    layers: tuple

    def __post_init__(self):
        layers = tuple(cb if isinstance(cb, Codebook) else Codebook(cb) for cb in self.layers)
        if not layers:
            raise ShapeError("CodebookStack needs at least one layer")
        dims = {cb.D for cb in layers}
        if len(dims) != 1:
            raise ShapeError(f"codebook layers disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "CodebookStack":
        return cls(tuple(Codebook(a) for a in arrays))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def D(self) -> int:
        return self.layers[0].D

    @property
    def sizes(self) -> list[int]:
        return [cb.K for cb in self.layers]

    def arrays(self) -> list[np.ndarray]:
        return [cb.entries for cb in self.layers]

    def __len__(self) -> int:
        return len(self.layers)

    def __eq__(self, other):
        return (
            isinstance(other, CodebookStack)
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )
