"""Desk-scale codec: encoder -> (bottleneck) -> RVQ / RVQ-STA -> decoder, with
the token-distillation branch reading the encoder output.

Parameters live in one flat ``dict[str, ndarray]``:

    enc.w1 enc.b1 enc.w2 enc.b2        encoder MLP, D_in -> D
    bt.w bt.b                          bottleneck, z = e + act(window(e) w + b)
    dec.w1 dec.b1 dec.w2 dec.b2        decoder MLP, D -> D_in
    codebook.0 ... codebook.{N_q-1}    K x D each
    spd.w1 spd.b1 spd.w2 spd.b2        token classifier over window(mask(e))

Stop-gradient points: the decoder sees ``z + sg(zhat - z)``; the codebook
term is |sg(z) - zhat|^2 and the commitment term |z - sg(zhat)|^2. Passing
``frozen`` to :func:`forward` pins those ``sg(...)`` values so a finite
difference sees exactly the function that :func:`backward` differentiates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.config import ModelConfig
from ..core.types import RvqStaError, TokenRangeError
from ..layers import (
    activate,
    activation_grad,
    context_window,
    context_window_backward,
    init_dense,
    mlp_backward,
    mlp_forward,
)
from ..rvq import QuantizationOutput, rvq_encode, rvq_sta_encode
from ..spd import SpdParams, cross_entropy, spd_backward, spd_forward_cached

MODES = ("stage1", "stage2", "inference")
GROUND_TRUTH = "ground_truth"
DISTILLED = "distilled"


class ForwardError(RvqStaError, ValueError):
    pass


def codebook_names(cfg: ModelConfig) -> list[str]:
    return [f"codebook.{i}" for i in range(cfg.model.n_q)]


def trainable_codebooks(cfg: ModelConfig) -> list[int]:
    """Indices of codebook layers updated by gradient (layer 0 only with tc on)."""
    if not cfg.model.quantizer:
        return []
    start = 0 if cfg.toggles.tc else 1
    return list(range(start, cfg.model.n_q))


def trainable_names(cfg: ModelConfig, params: dict) -> list[str]:
    frozen = {f"codebook.{i}" for i in range(cfg.model.n_q)} - {
        f"codebook.{i}" for i in trainable_codebooks(cfg)
    }
    return [n for n in params if n not in frozen]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    m, s = cfg.model, cfg.model.init_scale
    p: dict[str, np.ndarray] = {}
    p["enc.w1"], p["enc.b1"] = init_dense(rng, m.d_in, m.enc_hidden, s)
    p["enc.w2"], p["enc.b2"] = init_dense(rng, m.enc_hidden, m.d, s)
    if cfg.toggles.bt:
        p["bt.w"], p["bt.b"] = init_dense(rng, (2 * m.bt_context + 1) * m.d, m.d, s)
    p["dec.w1"], p["dec.b1"] = init_dense(rng, m.d, m.dec_hidden, s)
    p["dec.w2"], p["dec.b2"] = init_dense(rng, m.dec_hidden, m.d_in, s)
    if m.quantizer:
        for name in codebook_names(cfg):
            p[name] = rng.normal(0.0, 1.0, size=(m.k, m.d))
    if cfg.toggles.spd:
        spd = SpdParams.init(rng, m.d, m.spd_hidden, m.v, m.spd_context, m.activation, s)
        for k, v in spd.tensors().items():
            p["spd." + k] = v
    return p


def spd_params(params: dict, cfg: ModelConfig) -> SpdParams:
    return SpdParams(params["spd.w1"], params["spd.b1"], params["spd.w2"], params["spd.b2"],
                     cfg.model.spd_context, cfg.model.activation)


def codebooks(params: dict, cfg: ModelConfig) -> list[np.ndarray]:
    return [params[n] for n in codebook_names(cfg)]


@dataclass
class ForwardResult:
    mode: str
    x: np.ndarray
    e: np.ndarray
    z: np.ndarray
    zhat: np.ndarray
    xhat: np.ndarray
    qout: QuantizationOutput | None
    tokens: np.ndarray | None        # (B, T) token source fed to the quantizer
    tokens_used: str
    logits: np.ndarray | None
    keep: np.ndarray | None          # (B, T, D) mask applied to the SPD input
    recon_loss: float
    codebook_loss: float
    commitment_loss: float
    spd_loss: float | None
    codebook_weight: float
    codec_loss: float
    total_loss: float
    cache: dict = field(default_factory=dict, repr=False)

    def decisions(self) -> tuple:
        """Discrete choices taken by this pass (codes and argmax tokens)."""
        codes = None if self.qout is None else self.qout.codes.copy()
        toks = None if self.logits is None else np.argmax(self.logits, axis=-1)
        return codes, toks


def _check_tokens(tokens, cfg: ModelConfig, shape) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != shape:
        raise ForwardError(f"token array has shape {tokens.shape}, expected {shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.model.v):
        bad = int(tokens[(tokens < 0) | (tokens >= cfg.model.v)][0])
        raise TokenRangeError(f"token out of range: {bad} not in [0, {cfg.model.v})")
    return tokens


def forward(params: dict, cfg: ModelConfig, x: np.ndarray, tokens_gt=None, mode: str = "stage1",
            keep: np.ndarray | None = None, frozen: dict | None = None) -> ForwardResult:
    """Run the pipeline on a batch ``x`` of shape (B, T, D_in).

    ``keep`` is the (B, T, D) 0/1 mask on the SPD input (stage 2 only).
    """
    if mode not in MODES:
        raise ForwardError(f"unknown mode {mode!r}")
    m, tg = cfg.model, cfg.toggles
    act = m.activation
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != m.d_in:
        raise ForwardError(f"features must have shape (B, T, {m.d_in}), got {x.shape}")
    B, T, _ = x.shape
    if tokens_gt is not None:
        tokens_gt = _check_tokens(tokens_gt, cfg, (B, T))
    cache: dict = {}

    e, cache["h_enc"] = mlp_forward(x, params["enc.w1"], params["enc.b1"],
                                    params["enc.w2"], params["enc.b2"], act)
    if tg.bt:
        win = context_window(e, m.bt_context)
        a = activate(win @ params["bt.w"] + params["bt.b"], act)
        z = e + a
        cache["bt_win"], cache["bt_a"] = win, a
    else:
        z = e

    use_spd = tg.spd and mode in ("stage2", "inference")
    if mode == "stage2" and not tg.spd:
        raise ForwardError("stage2 requires the SPD branch (toggles.spd)")
    logits = None
    if use_spd:
        if "spd.w1" not in params:
            raise ForwardError("missing SPD parameters")
        spd_base = e
        if frozen is not None and not cfg.training.spd_grad_to_encoder:
            spd_base = frozen["e"]
        if mode != "stage2" or keep is None:
            keep = None
            spd_in = spd_base
        else:
            spd_in = spd_base * keep
        logits, cache["spd"] = spd_forward_cached(spd_in, spd_params(params, cfg))
        tokens = np.argmax(logits, axis=-1)
        tokens_used = DISTILLED
    else:
        keep = None
        tokens = tokens_gt
        tokens_used = GROUND_TRUTH

    qout = None
    if m.quantizer:
        flat = z.reshape(B * T, m.d)
        if tg.sta:
            if tokens is None:
                raise ForwardError("semantic token assignment needs tokens")
            qout = rvq_sta_encode(flat, tokens.reshape(-1), codebooks(params, cfg))
        else:
            qout = rvq_encode(flat, codebooks(params, cfg))
        zhat = qout.summed.reshape(B, T, m.d)
    else:
        zhat = z

    if frozen is not None and m.quantizer:
        dec_in = z + (frozen["zhat"] - frozen["z"])
    else:
        dec_in = zhat
    xhat, cache["h_dec"] = mlp_forward(dec_in, params["dec.w1"], params["dec.b1"],
                                       params["dec.w2"], params["dec.b2"], act)
    cache["dec_in"] = dec_in

    diff = xhat - x
    recon = float(np.mean(diff * diff))
    frames = B * T
    if m.quantizer:
        z_sg = frozen["z"] if frozen is not None else z
        zhat_sg = frozen["zhat"] if frozen is not None else zhat
        d_cb = z_sg - zhat
        d_cm = z - zhat_sg
        cb_loss = float(np.sum(d_cb * d_cb) / frames)
        cm_loss = float(np.sum(d_cm * d_cm) / frames)
        cache["d_cb"], cache["d_cm"] = d_cb, d_cm
    else:
        cb_loss = cm_loss = 0.0
    cb_weight = 1.0 if trainable_codebooks(cfg) else 0.0
    beta = cfg.training.commitment_weight if m.quantizer else 0.0

    spd_loss = None
    if mode == "stage2":
        if tokens_gt is None:
            raise ForwardError("stage2 needs ground-truth tokens for the distillation loss")
        spd_loss, cache["g_logits"] = cross_entropy(logits, tokens_gt)

    codec = recon + cb_weight * cb_loss + beta * cm_loss
    total = codec + cfg.training.lambda_spd * spd_loss if spd_loss is not None else codec

    return ForwardResult(
        mode=mode, x=x, e=e, z=z, zhat=zhat, xhat=xhat, qout=qout,
        tokens=None if tokens is None else np.asarray(tokens).reshape(B, T),
        tokens_used=tokens_used, logits=logits, keep=keep,
        recon_loss=recon, codebook_loss=cb_loss, commitment_loss=cm_loss, spd_loss=spd_loss,
        codebook_weight=cb_weight, codec_loss=codec, total_loss=total, cache=cache,
    )


def backward(res: ForwardResult, params: dict, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Gradients of ``res.total_loss`` w.r.t. every trainable parameter."""
    m, tg, tr = cfg.model, cfg.toggles, cfg.training
    act = m.activation
    c = res.cache
    B, T, _ = res.x.shape
    frames = B * T
    grads: dict[str, np.ndarray] = {}

    g_xhat = 2.0 * (res.xhat - res.x) / res.x.size
    g_dec_in, grads["dec.w1"], grads["dec.b1"], grads["dec.w2"], grads["dec.b2"] = mlp_backward(
        g_xhat, c["dec_in"], c["h_dec"], params["dec.w1"], params["dec.w2"], act)

    # Straight-through: the reconstruction gradient w.r.t. zhat is passed to z unchanged.
    g_z = g_dec_in
    if m.quantizer:
        g_z = g_z + tr.commitment_weight * 2.0 * c["d_cm"] / frames
        g_zhat = (-2.0 * res.codebook_weight / frames) * c["d_cb"].reshape(frames, m.d)
        for i in trainable_codebooks(cfg):
            g = np.zeros_like(params[f"codebook.{i}"])
            np.add.at(g, res.qout.codes[i], g_zhat)
            grads[f"codebook.{i}"] = g

    g_e = g_z
    if tg.bt:
        g_pre = g_z * activation_grad(c["bt_a"], act)
        grads["bt.w"] = c["bt_win"].reshape(frames, -1).T @ g_pre.reshape(frames, -1)
        grads["bt.b"] = g_pre.sum(axis=(0, 1))
        g_e = g_e + context_window_backward(g_pre @ params["bt.w"].T, m.bt_context, m.d)

    if tg.spd:
        if res.mode == "stage2":
            sp = spd_params(params, cfg)
            g_sp, g_in = spd_backward(tr.lambda_spd * c["g_logits"], c["spd"], sp)
            for k, v in g_sp.items():
                grads["spd." + k] = v
            if tr.spd_grad_to_encoder:
                g_e = g_e + (g_in * res.keep if res.keep is not None else g_in)
        else:
            for k in ("w1", "b1", "w2", "b2"):
                grads["spd." + k] = np.zeros_like(params["spd." + k])

    _, grads["enc.w1"], grads["enc.b1"], grads["enc.w2"], grads["enc.b2"] = mlp_backward(
        g_e, res.x, c["h_enc"], params["enc.w1"], params["enc.w2"], act)
    return grads


def frozen_values(res: ForwardResult) -> dict[str, np.ndarray]:
    """Stop-gradient values captured from a forward pass (for finite differences)."""
    return {"z": res.z.copy(), "zhat": res.zhat.copy(), "e": res.e.copy()}
