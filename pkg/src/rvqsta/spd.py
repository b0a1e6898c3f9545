"""Semantic pre-distillation: span masking, a context-window token classifier,
and its cross-entropy training signal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.config import MaskAxisConfig, MaskConfig
from .core.types import FeatureSequence, ShapeError, TokenRangeError, TokenSequence
from .layers import context_window, context_window_backward, init_dense, mlp_backward, mlp_forward


# ---------------------------------------------------------------- masking

@dataclass(frozen=True)
class MaskPlan:
    T: int
    D: int
    temporal_spans: tuple = ()
    feature_spans: tuple = ()
    axis_active: tuple = (False, False)

    def __post_init__(self):
        for name, spans, n in (("temporal", self.temporal_spans, self.T),
                               ("feature", self.feature_spans, self.D)):
            for start, length in spans:
                if start < 0 or length < 1 or start + length > n:
                    raise ShapeError(f"{name} span ({start}, {length}) out of bounds for length {n}")
        if not self.axis_active[0] and self.temporal_spans:
            raise ShapeError("inactive temporal axis carries spans")
        if not self.axis_active[1] and self.feature_spans:
            raise ShapeError("inactive feature axis carries spans")

    @property
    def is_empty(self) -> bool:
        return not self.temporal_spans and not self.feature_spans

    @property
    def num_spans(self) -> int:
        return len(self.temporal_spans) + len(self.feature_spans)

    def masked_frames(self) -> np.ndarray:
        rows = np.zeros(self.T, dtype=bool)
        for start, length in self.temporal_spans:
            rows[start:start + length] = True
        return rows

    def masked_features(self) -> np.ndarray:
        cols = np.zeros(self.D, dtype=bool)
        for start, length in self.feature_spans:
            cols[start:start + length] = True
        return cols

    def keep(self) -> np.ndarray:
        """(T, D) float matrix: 1 where the input survives, 0 where masked."""
        masked = self.masked_frames()[:, None] | self.masked_features()[None, :]
        return (~masked).astype(np.float64)


def _sample_axis(length: int, cfg: MaskAxisConfig, rng: np.random.Generator):
    active = bool(rng.random() < cfg.prob)
    if not active or cfg.num_spans == 0:
        return active, ()
    span = min(cfg.span_len, length)
    starts = rng.integers(0, length - span + 1, size=cfg.num_spans)
    return True, tuple((int(s), span) for s in starts)


def sample_mask_plan(T: int, D: int, cfg: MaskConfig, rng: np.random.Generator) -> MaskPlan:
    """Draw one plan. Each axis is switched on with its own probability; an
    active axis gets ``num_spans`` spans with uniform starts in
    ``[0, length - span_len]`` (span_len clamped to the axis length)."""
    t_active, t_spans = _sample_axis(T, cfg.temporal, rng)
    f_active, f_spans = _sample_axis(D, cfg.feature, rng)
    return MaskPlan(T, D, t_spans, f_spans, (t_active, f_active))


def empty_plan(T: int, D: int) -> MaskPlan:
    return MaskPlan(T, D)


def apply_mask(e, plan: MaskPlan):
    """Zero the union of the plan's row and column spans; ``e`` is untouched."""
    frames = e.frames if isinstance(e, FeatureSequence) else np.asarray(e, dtype=np.float64)
    if frames.shape != (plan.T, plan.D):
        raise ShapeError(f"mask plan is for shape ({plan.T}, {plan.D}), input has {frames.shape}")
    out = frames * plan.keep()
    return FeatureSequence(out) if isinstance(e, FeatureSequence) else out


# ---------------------------------------------------------------- classifier

@dataclass(frozen=True, eq=False)
class SpdParams:
    """Per-frame classifier over a +-context window of input frames:
    logits = act(window(e) w1 + b1) w2 + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    context: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        if self.w1.shape[0] % (2 * self.context + 1):
            raise ShapeError("w1 rows must be a multiple of the window width")
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[0] != self.b1.shape[0]:
            raise ShapeError("hidden widths of w1, b1, w2 disagree")
        if self.w2.shape[1] != self.b2.shape[0]:
            raise ShapeError("w2 columns and b2 disagree")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0] // (2 * self.context + 1)

    @property
    def vocab(self) -> int:
        return self.b2.shape[0]

    @classmethod
    def init(cls, rng, in_dim: int, hidden: int, vocab: int, context: int = 2,
             activation: str = "tanh", scale: float = 1.0) -> "SpdParams":
        w1, b1 = init_dense(rng, (2 * context + 1) * in_dim, hidden, scale)
        w2, b2 = init_dense(rng, hidden, vocab, scale)
        return cls(w1, b1, w2, b2, context, activation)

    @classmethod
    def zeros(cls, in_dim: int, hidden: int, vocab: int, context: int = 2) -> "SpdParams":
        width = (2 * context + 1) * in_dim
        return cls(np.zeros((width, hidden)), np.zeros(hidden), np.zeros((hidden, vocab)),
                   np.zeros(vocab), context)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def _batched(x) -> tuple[np.ndarray, bool]:
    arr = x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise ShapeError(f"expected (T, D) or (B, T, D) input, got shape {arr.shape}")


def spd_forward_cached(e_masked, params: SpdParams):
    x, squeeze = _batched(e_masked)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"dimension mismatch: input D={x.shape[-1]}, classifier expects {params.in_dim}")
    win = context_window(x, params.context)
    logits, h = mlp_forward(win, params.w1, params.b1, params.w2, params.b2, params.activation)
    return (logits[0] if squeeze else logits), (win, h, squeeze)


def spd_forward(e_masked, params: SpdParams) -> np.ndarray:
    """(T, V) logits (or (B, T, V) for batched input)."""
    return spd_forward_cached(e_masked, params)[0]


def spd_backward(grad_logits: np.ndarray, cache, params: SpdParams):
    """Returns (param grads dict, grad w.r.t. the classifier input)."""
    win, h, squeeze = cache
    g = grad_logits[None] if squeeze else grad_logits
    gwin, gw1, gb1, gw2, gb2 = mlp_backward(g, win, h, params.w1, params.w2, params.activation)
    gx = context_window_backward(gwin, params.context, params.in_dim)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}, (gx[0] if squeeze else gx)


# ---------------------------------------------------------------- loss / decode

def _targets(targets) -> np.ndarray:
    if isinstance(targets, TokenSequence):
        return targets.tokens
    return np.asarray(targets, dtype=np.int64).reshape(-1)


def cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean token cross-entropy and its gradient w.r.t. the logits.

    Accepts (T, V) or (B, T, V) logits; the mean runs over all frames.
    """
    logits = np.asarray(logits, dtype=np.float64)
    flat = logits.reshape(-1, logits.shape[-1])
    y = _targets(targets)
    n, V = flat.shape
    if y.size != n:
        raise ShapeError(f"length mismatch: {y.size} targets for {n} frames")
    if y.size and (y.min() < 0 or y.max() >= V):
        bad = int(y[(y < 0) | (y >= V)][0])
        raise TokenRangeError(f"target out of range: {bad} not in [0, {V})")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - shifted[rows, y]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, y] -= 1.0
    grad /= n
    return loss, grad.reshape(logits.shape)


def predict_tokens(logits) -> TokenSequence:
    logits = np.asarray(logits, dtype=np.float64)
    flat = logits.reshape(-1, logits.shape[-1])
    return TokenSequence(np.argmax(flat, axis=1), flat.shape[1])
