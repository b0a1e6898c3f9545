"""Little-endian binary containers for features, tokens, codebooks and parameters.

Layouts (all integers u32 LE, all reals f32 LE, payloads row-major)::

    features   "STAF" | version=1 | T | D | T*D f32
    tokens     "STAT" | version=1 | T | vocab | T u32      (one record per stream)
    codebooks  "STAC" | version=1 | num_layers | (K | D | K*D f32) per layer
    params     "STAP" | version=1 | num_tensors |
               (name_len | name utf-8 | ndim | dims... | prod(dims) f32) per tensor

A token file may hold several records back to back (one per RVQ layer);
``load_tokens`` expects exactly one, ``load_token_streams`` reads them all.

Values are held as float64 in memory and stored as float32, so a round trip
is bit-exact for any float32-representable input.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .types import (
    Codebook,
    CodebookStack,
    FeatureSequence,
    RvqStaError,
    TokenSequence,
)

VERSION = 1
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")
_U32_DT = np.dtype("<u4")


class FormatError(RvqStaError, ValueError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def fail(self, msg: str):
        raise FormatError(f"{self.path}: {msg}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            self.fail(f"truncated (needed {n} bytes at offset {self.pos}, file has {len(self.data)})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f32(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.take(4 * count), dtype=_F32).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            self.fail("non-finite value in payload")
        return arr

    def header(self, magic: bytes):
        got = self.take(4)
        if got != magic:
            self.fail(f"bad magic {got!r} (expected {magic!r})")
        version = self.u32()
        if version != VERSION:
            self.fail(f"unsupported version {version}")

    @property
    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def finish(self):
        if not self.at_end:
            self.fail(f"{len(self.data) - self.pos} trailing bytes after payload")


def _read(path) -> _Reader:
    return _Reader(Path(path).read_bytes(), path)


def _f32_bytes(arr: np.ndarray, what: str) -> bytes:
    out = np.ascontiguousarray(arr, dtype=np.float64).astype(_F32)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{what}: values are not finite in float32")
    return out.tobytes()


def _header(magic: bytes, *fields: int) -> bytes:
    return magic + b"".join(_U32.pack(f) for f in (VERSION, *fields))


# ---------------------------------------------------------------- features

def features_to_bytes(seq: FeatureSequence) -> bytes:
    return _header(b"STAF", seq.T, seq.D) + _f32_bytes(seq.frames, "features")


def save_features(seq: FeatureSequence, path) -> None:
    if not isinstance(seq, FeatureSequence):
        seq = FeatureSequence(seq)
    Path(path).write_bytes(features_to_bytes(seq))


def load_features(path, expected_dim: int | None = None) -> FeatureSequence:
    r = _read(path)
    r.header(b"STAF")
    T, D = r.u32(), r.u32()
    if T < 1 or D < 1:
        r.fail(f"dimension mismatch: T={T}, D={D} must both be >= 1")
    if expected_dim is not None and D != expected_dim:
        r.fail(f"dimension mismatch: file has D={D}, expected {expected_dim}")
    values = r.f32(T * D)
    r.finish()
    return FeatureSequence(values.reshape(T, D))


# ---------------------------------------------------------------- tokens

def tokens_to_bytes(seq: TokenSequence) -> bytes:
    return _header(b"STAT", len(seq), seq.vocab) + seq.tokens.astype(_U32_DT).tobytes()


def _read_token_record(r: _Reader) -> TokenSequence:
    r.header(b"STAT")
    T, vocab = r.u32(), r.u32()
    if vocab < 1:
        r.fail("vocab must be >= 1")
    tokens = np.frombuffer(r.take(4 * T), dtype=_U32_DT).astype(np.int64)
    bad = tokens >= vocab
    if bad.any():
        r.fail(f"token out of range: {int(tokens[bad][0])} >= vocab {vocab}")
    return TokenSequence(tokens, vocab)


def save_tokens(seq: TokenSequence, path) -> None:
    Path(path).write_bytes(tokens_to_bytes(seq))


def load_tokens(path) -> TokenSequence:
    r = _read(path)
    seq = _read_token_record(r)
    r.finish()
    return seq


def save_token_streams(streams: Sequence[TokenSequence], path) -> None:
    Path(path).write_bytes(b"".join(tokens_to_bytes(s) for s in streams))


def load_token_streams(path) -> list[TokenSequence]:
    r = _read(path)
    streams = [_read_token_record(r)]
    while not r.at_end:
        streams.append(_read_token_record(r))
    return streams


# ---------------------------------------------------------------- codebooks

def codebooks_to_bytes(stack: CodebookStack) -> bytes:
    parts = [_header(b"STAC", stack.num_layers)]
    for cb in stack.layers:
        parts.append(_U32.pack(cb.K) + _U32.pack(cb.D))
        parts.append(_f32_bytes(cb.entries, "codebook"))
    return b"".join(parts)


def save_codebooks(stack: CodebookStack, path) -> None:
    Path(path).write_bytes(codebooks_to_bytes(stack))


def load_codebooks(path) -> CodebookStack:
    r = _read(path)
    r.header(b"STAC")
    n = r.u32()
    if n < 1:
        r.fail("codebook file has no layers")
    layers = []
    for i in range(n):
        K, D = r.u32(), r.u32()
        if K < 1 or D < 1:
            r.fail(f"layer {i}: K={K}, D={D} must both be >= 1")
        if layers and D != layers[0].D:
            r.fail(f"layer-dimension mismatch: layer {i} has D={D}, layer 0 has D={layers[0].D}")
        layers.append(Codebook(r.f32(K * D).reshape(K, D)))
    r.finish()
    return CodebookStack(tuple(layers))


# ---------------------------------------------------------------- parameters

def params_to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [_header(b"STAP", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)) + raw + _U32.pack(arr.ndim))
        parts.append(b"".join(_U32.pack(s) for s in arr.shape))
        parts.append(_f32_bytes(arr, f"parameter {name!r}"))
    return b"".join(parts)


def save_params(tensors: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(params_to_bytes(tensors))


def load_params(path) -> dict[str, np.ndarray]:
    r = _read(path)
    r.header(b"STAP")
    out: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        if name in out:
            r.fail(f"duplicate tensor {name!r}")
        out[name] = r.f32(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    r.finish()
    return out
