"""Inference-time encode/decode and corpus-level evaluation of a trained model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.config import ModelConfig
from ..layers import mlp_forward
from ..metrics import UtilizationReport, codebook_utilization, majority_baseline
from ..rvq import decode_array
from .loop import Utterance, as_corpus
from .model import DISTILLED, GROUND_TRUTH, ForwardError, codebooks, forward


def _mode(cfg: ModelConfig, token_source: str) -> str:
    if token_source == DISTILLED:
        if not cfg.toggles.spd:
            raise ForwardError("model was trained without the SPD branch; use ground-truth tokens")
        return "inference"
    if token_source == GROUND_TRUTH:
        return "stage1"
    raise ForwardError(f"unknown token source {token_source!r}")


def default_token_source(cfg: ModelConfig) -> str:
    return DISTILLED if cfg.toggles.spd else GROUND_TRUTH


def encode_features(params: dict, cfg: ModelConfig, features: np.ndarray, tokens=None,
                    token_source: str | None = None) -> np.ndarray:
    """(N_q, T) codes for one utterance of shape (T, D_in)."""
    if not cfg.model.quantizer:
        raise ForwardError("model has no quantizer")
    token_source = token_source or default_token_source(cfg)
    x = np.asarray(features, dtype=np.float64)[None]
    tok = None if tokens is None else np.asarray(tokens, dtype=np.int64)[None]
    res = forward(params, cfg, x, tok, _mode(cfg, token_source))
    return res.qout.codes.copy()


def decode_codes(params: dict, cfg: ModelConfig, codes: np.ndarray) -> np.ndarray:
    """Reconstruct (T, D_in) features from (N_q, T) codes."""
    zhat = decode_array(codes, codebooks(params, cfg))
    xhat, _ = mlp_forward(zhat, params["dec.w1"], params["dec.b1"], params["dec.w2"],
                          params["dec.b2"], cfg.model.activation)
    return xhat


@dataclass
class Evaluation:
    token_source: str
    recon_mse: float
    token_accuracy: float | None
    majority_baseline: float
    distinct_gt_tokens: int
    distinct_source_tokens: int
    utilization: UtilizationReport
    codes: list

    def summary(self) -> dict:
        return {
            "token_source": self.token_source,
            "recon_mse": self.recon_mse,
            "token_accuracy": self.token_accuracy,
            "majority_baseline": self.majority_baseline,
            "distinct_gt_tokens": self.distinct_gt_tokens,
            "distinct_source_tokens": self.distinct_source_tokens,
            "layer_utilization": self.utilization.utilizations(),
        }


def evaluate(params: dict, cfg: ModelConfig, corpus, token_source: str | None = None) -> Evaluation:
    """Encode every utterance whole (unmasked) and aggregate metrics.

    ``token_accuracy`` compares the SPD argmax tokens with the ground truth
    whenever the model has an SPD branch, regardless of ``token_source``.
    """
    corpus: list[Utterance] = as_corpus(corpus)
    token_source = token_source or default_token_source(cfg)
    mode = _mode(cfg, token_source)
    sq_err, n_el, correct, n_frames = 0.0, 0, 0, 0
    codes, gts, srcs = [], [], []
    for u in corpus:
        x = u.features[None]
        tok = None if u.tokens is None else u.tokens[None]
        res = forward(params, cfg, x, tok, mode)
        d = res.xhat - x
        sq_err += float(np.sum(d * d))
        n_el += d.size
        if res.qout is not None:
            codes.append(res.qout.codes.copy())
        if res.tokens is not None:
            srcs.append(res.tokens.reshape(-1))
        if u.tokens is not None:
            gts.append(u.tokens)
            if cfg.toggles.spd:
                pred = res.tokens if mode == "inference" else np.argmax(
                    forward(params, cfg, x, tok, "inference").logits, axis=-1)
                correct += int(np.count_nonzero(pred.reshape(-1) == u.tokens))
                n_frames += u.tokens.size
    gt_all = np.concatenate(gts) if gts else np.zeros(0, dtype=np.int64)
    src_all = np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64)
    util = codebook_utilization([[c[i] for c in codes] for i in range(cfg.model.n_q)], cfg.model.k)
    return Evaluation(
        token_source=token_source,
        recon_mse=sq_err / n_el,
        token_accuracy=(correct / n_frames) if n_frames else None,
        majority_baseline=majority_baseline(gt_all) if gt_all.size else float("nan"),
        distinct_gt_tokens=int(np.unique(gt_all).size),
        distinct_source_tokens=int(np.unique(src_all).size),
        utilization=util,
        codes=codes,
    )
