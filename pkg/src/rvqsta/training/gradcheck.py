"""Central finite-difference check of the hand-written backward pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.config import ModelConfig
from ..spd import sample_mask_plan
from .loop import TrainState, init_state, rng_stream
from .model import backward, forward, frozen_values, trainable_names


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    per_param: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error < tol

    def to_dict(self) -> dict:
        return {"max_rel_error": self.max_rel_error, "checked": self.checked,
                "skipped": self.skipped, "per_param": self.per_param}


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    """|a - n| / max(|a|, |n|); pairs that are both below ``floor`` count as exact."""
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def toy_batch(cfg: ModelConfig, seed: int = 0):
    rng = rng_stream(seed, "gradcheck-batch")
    B, T = cfg.training.batch_size, cfg.training.segment_len
    x = rng.normal(size=(B, T, cfg.model.d_in))
    tokens = rng.integers(cfg.model.v, size=(B, T))
    return x, tokens


def gradient_check(state: TrainState, batch, eps: float = 1e-5, mode: str | None = None,
                   keep: np.ndarray | None = None, samples_per_param: int = 8,
                   seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients of the total loss with central differences.

    A random subset of entries of every trainable tensor is perturbed by
    +-eps. Perturbations that change any nearest-entry code or argmax token
    are excluded (counted in ``skipped``), since the loss is not
    differentiable across those decisions.
    """
    cfg = state.cfg
    mode = mode or state.mode
    x, tokens = batch
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in state.params.items()}
    base = forward(params, cfg, x, tokens, mode, keep=keep)
    frozen = frozen_values(base)
    ref = base.decisions()
    grads = backward(base, params, cfg)
    rng = np.random.default_rng(seed)

    worst, checked, skipped, per_param = 0.0, 0, 0, {}
    for name in trainable_names(cfg, params):
        p, g = params[name], grads[name]
        n = p.size
        picks = np.arange(n) if n <= samples_per_param else rng.choice(n, samples_per_param, replace=False)
        flat = p.reshape(-1)
        name_worst = 0.0
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + eps
            up = forward(params, cfg, x, tokens, mode, keep=keep, frozen=frozen)
            flat[idx] = orig - eps
            down = forward(params, cfg, x, tokens, mode, keep=keep, frozen=frozen)
            flat[idx] = orig
            if not all(_same(a, b) for r in (up, down) for a, b in zip(r.decisions(), ref)):
                skipped += 1
                continue
            numeric = (up.total_loss - down.total_loss) / (2 * eps)
            err = relative_error(float(g.reshape(-1)[idx]), numeric)
            name_worst = max(name_worst, err)
            checked += 1
        per_param[name] = name_worst
        worst = max(worst, name_worst)
    return GradCheckResult(worst, checked, skipped, per_param)


def check_config_stages(cfg: ModelConfig, seed: int = 0, eps: float = 1e-5) -> dict[str, GradCheckResult]:
    """Gradient-check a freshly initialised model in stage 1 and (if enabled) stage 2."""
    state = init_state(cfg)
    batch = toy_batch(cfg, seed)
    out = {"stage1": gradient_check(state, batch, eps, mode="stage1", seed=seed)}
    if cfg.toggles.spd:
        rng = rng_stream(seed, "gradcheck-mask")
        B, T = batch[0].shape[:2]
        keep = None
        if cfg.toggles.mask:
            keep = np.stack([sample_mask_plan(T, cfg.model.d, cfg.mask, rng).keep() for _ in range(B)])
        out["stage2"] = gradient_check(state, batch, eps, mode="stage2", keep=keep, seed=seed)
    return out
