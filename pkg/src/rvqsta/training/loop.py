"""Training state, the single optimization step, the two-stage loop, and
checkpoint persistence."""
from __future__ import annotations

import copy
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..core.config import ModelConfig, check_config, config_from_dict
from ..core.io import load_params, save_params
from ..core.types import FeatureSequence, RvqStaError, TokenSequence
from ..rvq import nearest_entries
from ..spd import sample_mask_plan
from .model import (
    DISTILLED,
    GROUND_TRUTH,
    backward,
    codebook_names,
    forward,
    init_params,
    trainable_codebooks,
    trainable_names,
)
from .optim import AdamState, NonFiniteError, adam_step, cosine_lr

STREAMS = ("init", "batching", "masking", "reset", "tokenizer")


class CorpusError(RvqStaError, ValueError):
    pass


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named randomness consumer."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


@dataclass
class Utterance:
    features: np.ndarray          # (T, D_in)
    tokens: np.ndarray | None     # (T,)


def as_corpus(items: Sequence) -> list[Utterance]:
    """Accept Utterances, (features, tokens) pairs, or bare feature arrays."""
    out = []
    for item in items:
        if isinstance(item, Utterance):
            out.append(item)
            continue
        if isinstance(item, (tuple, list)):
            feats, toks = item
        else:
            feats, toks = item, None
        if isinstance(feats, FeatureSequence):
            feats = feats.frames
        if isinstance(toks, TokenSequence):
            toks = toks.tokens
        out.append(Utterance(np.asarray(feats, dtype=np.float64),
                             None if toks is None else np.asarray(toks, dtype=np.int64)))
    return out


def check_corpus(cfg: ModelConfig, corpus: list[Utterance]) -> list[int]:
    """Validate against the config; returns indices long enough for one segment."""
    if not corpus:
        raise CorpusError("corpus is empty")
    for i, u in enumerate(corpus):
        if u.features.ndim != 2 or u.features.shape[1] != cfg.model.d_in:
            raise CorpusError(f"utterance {i}: features {u.features.shape} do not match d_in={cfg.model.d_in}")
        if u.tokens is None:
            raise CorpusError(f"utterance {i}: missing semantic tokens")
        if u.tokens.shape != (u.features.shape[0],):
            raise CorpusError(f"utterance {i}: {u.tokens.size} tokens for {u.features.shape[0]} frames")
        if u.tokens.size and (u.tokens.min() < 0 or u.tokens.max() >= cfg.model.v):
            raise CorpusError(f"utterance {i}: token out of range for vocab {cfg.model.v}")
    eligible = [i for i, u in enumerate(corpus) if u.features.shape[0] >= cfg.training.segment_len]
    if not eligible:
        raise CorpusError(f"no utterance has at least segment_len={cfg.training.segment_len} frames")
    return eligible


def sample_batch(corpus: list[Utterance], eligible: list[int], cfg: ModelConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    L, B = cfg.training.segment_len, cfg.training.batch_size
    picks = rng.integers(len(eligible), size=B)
    xs, ts = [], []
    for p in picks:
        u = corpus[eligible[int(p)]]
        start = int(rng.integers(u.features.shape[0] - L + 1))
        xs.append(u.features[start:start + L])
        ts.append(u.tokens[start:start + L])
    return np.stack(xs), np.stack(ts)


@dataclass
class StepReport:
    step: int
    stage: int
    recon_loss: float
    codebook_loss: float
    commitment_loss: float
    spd_loss: float | None
    codec_loss: float
    total_loss: float
    codebook_weight: float
    commitment_weight: float
    lambda_spd: float
    tokens_used: str
    lr: float
    mask_spans: int
    codes_reset: int

    def recomputed_total(self) -> float:
        codec = (self.recon_loss + self.codebook_weight * self.codebook_loss
                 + self.commitment_weight * self.commitment_loss)
        if self.spd_loss is None:
            return codec
        return codec + self.lambda_spd * self.spd_loss

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainState:
    cfg: ModelConfig
    params: dict
    adam: AdamState
    step: int
    rngs: dict
    unused: list = field(default_factory=list)   # per layer: consecutive steps without use

    @property
    def stage(self) -> int:
        if not self.cfg.toggles.spd:
            return 1
        return 1 if self.step < self.cfg.training.stage1_steps else 2

    @property
    def mode(self) -> str:
        return "stage1" if self.stage == 1 else "stage2"


def _init_codebooks_from_data(state: TrainState, corpus, eligible) -> None:
    """Seed each codebook layer with residuals drawn from one batch."""
    cfg = state.cfg
    if not cfg.model.quantizer:
        return
    rng = state.rngs["init"]
    x, tok = sample_batch(corpus, eligible, cfg, rng)
    res = forward(state.params, cfg, x, tok, "stage1")
    r = res.z.reshape(-1, cfg.model.d)
    flat_tok = tok.reshape(-1)
    for i, name in enumerate(codebook_names(cfg)):
        rows = rng.integers(r.shape[0], size=cfg.model.k)
        cb = r[rows].copy()
        state.params[name] = cb
        if i == 0 and cfg.toggles.sta:
            r = r - cb[flat_tok]
        else:
            r = r - cb[nearest_entries(r, cb)]


def init_state(cfg: ModelConfig, corpus=None) -> TrainState:
    check_config(cfg)
    rngs = {name: rng_stream(cfg.seed, name) for name in STREAMS}
    params = init_params(cfg, rngs["init"])
    state = TrainState(cfg, params, AdamState(), 0, rngs,
                       [np.zeros(cfg.model.k, dtype=np.int64) for _ in range(cfg.model.n_q)]
                       if cfg.model.quantizer else [])
    if corpus is not None:
        corpus = as_corpus(corpus)
        _init_codebooks_from_data(state, corpus, check_corpus(cfg, corpus))
    names = trainable_names(cfg, state.params)
    state.adam = AdamState.zeros_like({n: state.params[n] for n in names})
    return state


def _reset_dead_codes(params, adam, unused, res, cfg, rng) -> int:
    """Replace entries idle for ``dead_code_steps`` steps with random current residuals."""
    if res.qout is None:
        return 0
    exempt = set()
    if cfg.toggles.sta or not cfg.toggles.tc:
        exempt.add(0)
    residuals = res.qout.residuals(res.z.reshape(-1, cfg.model.d))
    n_reset = 0
    for i in range(cfg.model.n_q):
        used = np.bincount(res.qout.codes[i], minlength=cfg.model.k) > 0
        unused[i] = np.where(used, 0, unused[i] + 1)
        if i in exempt or i not in trainable_codebooks(cfg):
            continue
        dead = np.flatnonzero(unused[i] >= cfg.training.dead_code_steps)
        if dead.size == 0:
            continue
        name = f"codebook.{i}"
        rows = rng.integers(residuals.shape[1], size=dead.size)
        cb = params[name].copy()
        cb[dead] = residuals[i][rows]
        params[name] = cb
        for moments in (adam.m, adam.v):
            mm = moments[name].copy()
            mm[dead] = 0.0
            moments[name] = mm
        unused[i][dead] = 0
        n_reset += int(dead.size)
    return n_reset


def backward_and_step(state: TrainState, batch) -> tuple[TrainState, StepReport]:
    """One optimization step; returns a new state (``state`` is not modified)."""
    cfg = state.cfg
    x, tokens = batch
    rngs = copy.deepcopy(state.rngs)
    mode = state.mode
    B, T, _ = x.shape

    keep, n_spans = None, 0
    if mode == "stage2" and cfg.toggles.mask:
        plans = [sample_mask_plan(T, cfg.model.d, cfg.mask, rngs["masking"]) for _ in range(B)]
        n_spans = sum(p.num_spans for p in plans)
        keep = np.stack([p.keep() for p in plans])

    res = forward(state.params, cfg, x, tokens, mode, keep=keep)
    if not np.isfinite(res.total_loss):
        raise NonFiniteError(
            f"step {state.step}: non-finite loss (recon={res.recon_loss}, "
            f"codebook={res.codebook_loss}, commit={res.commitment_loss}, spd={res.spd_loss})"
        )
    grads = backward(res, state.params, cfg)
    grads = {n: grads[n] for n in state.adam.m}
    opt = cfg.optimizer
    lr = cosine_lr(state.step, opt.base_lr, opt.warmup_steps, opt.total_steps)
    params, adam = adam_step(state.params, grads, state.adam, lr, opt.beta1, opt.beta2, opt.eps)

    unused = [u.copy() for u in state.unused]
    n_reset = _reset_dead_codes(params, adam, unused, res, cfg, rngs["reset"])

    report = StepReport(
        step=state.step, stage=state.stage,
        recon_loss=res.recon_loss, codebook_loss=res.codebook_loss,
        commitment_loss=res.commitment_loss, spd_loss=res.spd_loss,
        codec_loss=res.codec_loss, total_loss=res.total_loss,
        codebook_weight=res.codebook_weight,
        commitment_weight=cfg.training.commitment_weight if cfg.model.quantizer else 0.0,
        lambda_spd=cfg.training.lambda_spd,
        tokens_used=res.tokens_used, lr=lr, mask_spans=n_spans, codes_reset=n_reset,
    )
    return TrainState(cfg, params, adam, state.step + 1, rngs, unused), report


def train(cfg: ModelConfig, corpus, out_dir=None, state: TrainState | None = None,
          on_step: Callable[[StepReport], None] | None = None):
    """Run stage 1 for ``stage1_steps`` steps, then stage 2 up to ``total_steps``.

    With ``out_dir`` set, writes ``train_log.jsonl`` (one record per step) and
    checkpoints every ``checkpoint_every`` steps plus one at the end.
    Returns (final state, list of StepReports).
    """
    check_config(cfg)
    corpus = as_corpus(corpus)
    eligible = check_corpus(cfg, corpus)
    if state is None:
        state = init_state(cfg, corpus)
    out = Path(out_dir) if out_dir is not None else None
    log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log = open(out / "train_log.jsonl", "a" if state.step else "w")
    reports = []
    try:
        while state.step < cfg.optimizer.total_steps:
            batch = sample_batch(corpus, eligible, cfg, state.rngs["batching"])
            state, report = backward_and_step(state, batch)
            reports.append(report)
            if log is not None:
                log.write(report.to_json() + "\n")
            if on_step is not None:
                on_step(report)
            if out is not None and (state.step % cfg.training.checkpoint_every == 0
                                    or state.step == cfg.optimizer.total_steps):
                save_checkpoint(state, out / f"checkpoint_{state.step:07d}.stap")
    finally:
        if log is not None:
            log.close()
    return state, reports


# ---------------------------------------------------------------- checkpoints

def _rng_state(g: np.random.Generator) -> dict:
    return g.bit_generator.state


def save_checkpoint(state: TrainState, path) -> None:
    """Write parameters, Adam moments and usage counters (STAP) plus a JSON manifest."""
    path = Path(path)
    tensors = {}
    for name, arr in state.params.items():
        tensors[f"param/{name}"] = arr
    for name in state.adam.m:
        tensors[f"adam.m/{name}"] = state.adam.m[name]
        tensors[f"adam.v/{name}"] = state.adam.v[name]
    for i, u in enumerate(state.unused):
        tensors[f"unused/{i}"] = u
    save_params(tensors, path)
    manifest = {
        "format": "STAP",
        "step": state.step,
        "stage": state.stage,
        "seed": state.cfg.seed,
        "config_hash": state.cfg.hash(),
        "config": state.cfg.to_dict(),
        "adam_t": state.adam.t,
        "rng": {k: _rng_state(g) for k, g in state.rngs.items()},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise CorpusError(f"{manifest_path}: checkpoint manifest not found") from None
    cfg = check_config(config_from_dict(manifest["config"]))
    if cfg.hash() != manifest["config_hash"]:
        raise CorpusError(f"{manifest_path}: config hash mismatch")
    tensors = load_params(path)
    params, m, v, unused = {}, {}, {}, {}
    for key, arr in tensors.items():
        group, name = key.split("/", 1)
        {"param": params, "adam.m": m, "adam.v": v, "unused": unused}[group][name] = arr
    rngs = {}
    for name, st in manifest["rng"].items():
        g = np.random.default_rng()
        g.bit_generator.state = st
        rngs[name] = g
    unused_list = [unused[str(i)].astype(np.int64) for i in range(len(unused))]
    return TrainState(cfg, params, AdamState(m, v, manifest["adam_t"]), manifest["step"], rngs, unused_list)


def params_from_checkpoint(path) -> tuple[ModelConfig, dict]:
    st = load_checkpoint(path)
    return st.cfg, st.params


__all__ = [
    "CorpusError", "StepReport", "TrainState", "Utterance", "as_corpus", "backward_and_step",
    "check_corpus", "init_state", "load_checkpoint", "rng_stream", "sample_batch",
    "save_checkpoint", "train", "GROUND_TRUTH", "DISTILLED",
]
