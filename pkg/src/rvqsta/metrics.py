"""Codebook utilization per RVQ layer, token accuracy and reconstruction error."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core.types import RvqStaError, ShapeError, TokenRangeError, TokenSequence


class ReportError(RvqStaError, ValueError):
    pass


@dataclass(frozen=True)
class LayerUtilization:
    used_count: int
    utilization: float
    histogram: tuple
    entropy_bits: float

    def to_dict(self) -> dict:
        return {"used_count": self.used_count, "utilization": self.utilization,
                "histogram": list(self.histogram), "entropy_bits": self.entropy_bits}


@dataclass(frozen=True)
class UtilizationReport:
    K: int
    layers: tuple
    num_utterances: int
    total_frames: int

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def utilizations(self) -> list[float]:
        return [lay.utilization for lay in self.layers]

    def to_dict(self) -> dict:
        return {"K": self.K, "num_layers": self.num_layers, "num_utterances": self.num_utterances,
                "total_frames": self.total_frames, "layers": [lay.to_dict() for lay in self.layers]}

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "UtilizationReport":
        layers = tuple(LayerUtilization(int(x["used_count"]), float(x["utilization"]),
                                        tuple(int(c) for c in x["histogram"]), float(x["entropy_bits"]))
                       for x in d["layers"])
        return cls(int(d["K"]), layers, int(d["num_utterances"]), int(d["total_frames"]))


def histogram_entropy_bits(hist: np.ndarray) -> float:
    total = hist.sum()
    if total == 0:
        return 0.0
    p = hist[hist > 0] / total
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _stream(layer) -> tuple[np.ndarray, int]:
    """Concatenate one layer given as an array, a TokenSequence, or a list of utterances."""
    if isinstance(layer, TokenSequence):
        return layer.tokens, 1
    if isinstance(layer, np.ndarray) and layer.ndim == 1:
        return layer.astype(np.int64), 1
    parts = [p.tokens if isinstance(p, TokenSequence) else np.asarray(p, dtype=np.int64).reshape(-1)
             for p in layer]
    if not parts:
        return np.zeros(0, dtype=np.int64), 0
    return np.concatenate(parts), len(parts)


def codebook_utilization(codes: Sequence, K: int) -> UtilizationReport:
    """Distinct-code count, histogram and entropy for each layer over the whole corpus.

    ``codes[i]`` is layer i's stream: a 1-D int array, a TokenSequence, or a
    list of per-utterance arrays (which are concatenated).
    """
    if K < 1:
        raise ReportError(f"K must be >= 1, got {K}")
    layers, frames, utts = [], None, 0
    for i, layer in enumerate(codes):
        stream, n_utts = _stream(layer)
        if stream.size and (stream.min() < 0 or stream.max() >= K):
            bad = int(stream[(stream < 0) | (stream >= K)][0])
            raise TokenRangeError(f"layer {i}: code out of range: {bad} not in [0, {K})")
        if frames is not None and stream.size != frames:
            raise ShapeError(f"layer {i} has {stream.size} frames, layer 0 has {frames}")
        frames, utts = stream.size, max(utts, n_utts)
        hist = np.bincount(stream, minlength=K)
        used = int(np.count_nonzero(hist))
        layers.append(LayerUtilization(used, used / K, tuple(int(c) for c in hist),
                                       histogram_entropy_bits(hist)))
    if not layers:
        raise ReportError("no code layers given")
    return UtilizationReport(int(K), tuple(layers), utts, int(frames))


def merge_utilization(reports: Sequence[UtilizationReport]) -> UtilizationReport:
    """Combine partial reports (e.g. computed on corpus shards) by summing histograms."""
    if not reports:
        raise ReportError("nothing to merge")
    K, n = reports[0].K, reports[0].num_layers
    if any(r.K != K or r.num_layers != n for r in reports):
        raise ReportError("reports disagree on K or layer count")
    layers = []
    for i in range(n):
        hist = np.sum([np.asarray(r.layers[i].histogram) for r in reports], axis=0)
        used = int(np.count_nonzero(hist))
        layers.append(LayerUtilization(used, used / K, tuple(int(c) for c in hist),
                                       histogram_entropy_bits(hist)))
    return UtilizationReport(K, tuple(layers), sum(r.num_utterances for r in reports),
                             sum(r.total_frames for r in reports))


def utilization_compare(reports: Mapping[str, UtilizationReport]) -> dict:
    """Side-by-side per-layer utilization plus the minimum over layers."""
    if not reports:
        raise ReportError("no reports to compare")
    items = list(reports.items())
    K, n = items[0][1].K, items[0][1].num_layers
    for name, r in items:
        if r.K != K or r.num_layers != n:
            raise ReportError(
                f"incompatible report {name!r}: K={r.K}, layers={r.num_layers} "
                f"(expected K={K}, layers={n})"
            )
    rows = []
    for i in range(n):
        row = {"layer": i + 1}
        row.update({name: r.layers[i].utilization for name, r in items})
        rows.append(row)
    return {
        "K": K,
        "num_layers": n,
        "columns": [name for name, _ in items],
        "layers": rows,
        "min_over_layers": {name: min(r.utilizations()) for name, r in items},
    }


def comparison_json(table: dict) -> str:
    return json.dumps(table, sort_keys=True, indent=2)


def token_accuracy(pred, gt) -> float:
    p = pred.tokens if isinstance(pred, TokenSequence) else np.asarray(pred).reshape(-1)
    g = gt.tokens if isinstance(gt, TokenSequence) else np.asarray(gt).reshape(-1)
    if p.size != g.size:
        raise ShapeError(f"length mismatch: {p.size} predictions vs {g.size} targets")
    if p.size == 0:
        raise ShapeError("empty token sequences")
    return float(np.count_nonzero(p == g) / p.size)


def majority_baseline(gt) -> float:
    """Accuracy of always predicting the most frequent token."""
    g = gt.tokens if isinstance(gt, TokenSequence) else np.asarray(gt, dtype=np.int64).reshape(-1)
    return float(np.bincount(g).max() / g.size)


def reconstruction_mse(xhat, x) -> float:
    a = np.asarray(getattr(xhat, "frames", xhat), dtype=np.float64)
    b = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def max_entropy_bits(K: int) -> float:
    return math.log2(K)
