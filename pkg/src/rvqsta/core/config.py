"""Model/training configuration, validation and TOML persistence.

The on-disk layout mirrors the dataclass nesting::

    seed = 0

    [model]
    d_in = 64
    d = 128
    ...

    [mask.temporal]
    prob = 0.5
    num_spans = 2
    span_len = 10

Unknown keys are rejected so typos fail fast.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .types import RvqStaError


class ConfigError(RvqStaError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class ArchConfig:
    d_in: int = 64
    d: int = 128
    n_q: int = 8
    k: int = 1024
    v: int = 1024
    enc_hidden: int = 256
    dec_hidden: int = 256
    spd_hidden: int = 256
    spd_context: int = 2
    bt_context: int = 1
    activation: str = "tanh"
    # False bypasses quantization entirely (decoder sees z); gradient-check toy only.
    quantizer: bool = True
    init_scale: float = 1.0


@dataclass(frozen=True)
class TrainingConfig:
    stage1_steps: int = 90_000
    segment_len: int = 150
    batch_size: int = 32
    lambda_spd: float = 5.0
    commitment_weight: float = 0.25
    dead_code_steps: int = 200
    checkpoint_every: int = 10_000
    spd_grad_to_encoder: bool = True


@dataclass(frozen=True)
class MaskAxisConfig:
    prob: float = 0.5
    num_spans: int = 2
    span_len: int = 10


@dataclass(frozen=True)
class MaskConfig:
    temporal: MaskAxisConfig = field(default_factory=lambda: MaskAxisConfig(0.5, 2, 10))
    feature: MaskAxisConfig = field(default_factory=lambda: MaskAxisConfig(0.5, 2, 8))


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 3e-4
    warmup_steps: int = 4000
    total_steps: int = 250_000
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8


@dataclass(frozen=True)
class Toggles:
    sta: bool = True
    bt: bool = True
    tc: bool = True
    mask: bool = True
    # Off trains the codec alone: every step uses ground-truth tokens, no SPD branch.
    spd: bool = True


@dataclass(frozen=True)
class ModelConfig:
    model: ArchConfig = field(default_factory=ArchConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    toggles: Toggles = field(default_factory=Toggles)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_axis(name: str, axis: MaskAxisConfig, out: list[str]) -> None:
    if not (0.0 <= axis.prob <= 1.0):
        out.append(f"mask.{name}.prob: must lie in [0, 1] (got {axis.prob})")
    if axis.span_len < 1:
        out.append(f"mask.{name}.span_len: must be >= 1 (got {axis.span_len})")
    if axis.num_spans < 0:
        out.append(f"mask.{name}.num_spans: must be >= 0 (got {axis.num_spans})")


def validate_config(cfg: ModelConfig) -> list[str]:
    """Return every violated invariant; an empty list means the config is valid."""
    problems: list[str] = []
    m, tr, opt = cfg.model, cfg.training, cfg.optimizer

    for name in ("d_in", "d", "n_q", "k", "v", "enc_hidden", "dec_hidden", "spd_hidden"):
        value = getattr(m, name)
        if not isinstance(value, int) or value < 1:
            problems.append(f"model.{name}: must be an integer >= 1 (got {value!r})")
    for name in ("spd_context", "bt_context"):
        if getattr(m, name) < 0:
            problems.append(f"model.{name}: must be >= 0 (got {getattr(m, name)})")
    if m.activation not in ACTIVATIONS:
        problems.append(f"model.activation: must be one of {ACTIVATIONS} (got {m.activation!r})")
    if not (m.init_scale > 0 and math.isfinite(m.init_scale)):
        problems.append(f"model.init_scale: must be a finite positive number (got {m.init_scale})")
    if cfg.toggles.sta and m.v > m.k:
        problems.append(f"model.v: V ≤ K violated (v={m.v}, k={m.k}) while toggles.sta is on")

    if opt.total_steps < 1:
        problems.append(f"optimizer.total_steps: must be >= 1 (got {opt.total_steps})")
    if cfg.toggles.spd and not (0 <= tr.stage1_steps < opt.total_steps):
        problems.append(
            f"training.stage1_steps: stage1_steps < total_steps violated "
            f"(stage1_steps={tr.stage1_steps}, total_steps={opt.total_steps})"
        )
    if not (0 <= opt.warmup_steps < opt.total_steps):
        problems.append(
            f"optimizer.warmup_steps: must satisfy 0 <= warmup < total_steps "
            f"(warmup={opt.warmup_steps}, total_steps={opt.total_steps})"
        )
    if not (opt.base_lr >= 0 and math.isfinite(opt.base_lr)):
        problems.append(f"optimizer.base_lr: must be finite and >= 0 (got {opt.base_lr})")
    for name in ("beta1", "beta2"):
        beta = getattr(opt, name)
        if not (0.0 <= beta < 1.0):
            problems.append(f"optimizer.{name}: must lie in [0, 1) (got {beta})")
    if not opt.eps > 0:
        problems.append(f"optimizer.eps: must be > 0 (got {opt.eps})")

    if tr.segment_len < 1:
        problems.append(f"training.segment_len: must be >= 1 (got {tr.segment_len})")
    if tr.batch_size < 1:
        problems.append(f"training.batch_size: must be >= 1 (got {tr.batch_size})")
    if tr.lambda_spd < 0:
        problems.append(f"training.lambda_spd: must be >= 0 (got {tr.lambda_spd})")
    if tr.commitment_weight < 0:
        problems.append(f"training.commitment_weight: must be >= 0 (got {tr.commitment_weight})")
    if tr.dead_code_steps < 1:
        problems.append(f"training.dead_code_steps: must be >= 1 (got {tr.dead_code_steps})")
    if tr.checkpoint_every < 1:
        problems.append(f"training.checkpoint_every: must be >= 1 (got {tr.checkpoint_every})")

    _check_axis("temporal", cfg.mask.temporal, problems)
    _check_axis("feature", cfg.mask.feature, problems)
    return problems


def check_config(cfg: ModelConfig) -> ModelConfig:
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _build(base, data: dict, where: str):
    """Return ``base`` with the values in ``data`` replaced, type-checked."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a table, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(base)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError([f"{where + '.' if where else ''}{k}: unknown key" for k in unknown])
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(default, value, key)
            continue
        expected = type(default)
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(value, bool) != (expected is bool) or not isinstance(value, expected):
            raise ConfigError(f"{key}: expected {expected.__name__}, got {value!r}")
        kwargs[name] = value
    return dataclasses.replace(base, **kwargs)


def config_from_dict(data: dict, base: ModelConfig | None = None) -> ModelConfig:
    return _build(base if base is not None else ModelConfig(), data, "")


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError([f"{path}: {p}" for p in exc.problems]) from None


def dump_config(cfg: ModelConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def with_overrides(cfg: ModelConfig, overrides: dict[str, Any]) -> ModelConfig:
    """Apply dotted-key overrides, e.g. ``{"optimizer.total_steps": 600}``."""
    data = cfg.to_dict()
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"{dotted}: unknown key")
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"{dotted}: unknown key")
        node[leaf] = value
    return config_from_dict(data)


def full_config(seed: int = 0) -> ModelConfig:
    """Full-size defaults: 8 codebooks x 1024 entries, D = 128, lambda = 5."""
    return ModelConfig(seed=seed)


def desk_config(seed: int = 0) -> ModelConfig:
    """Scaled-down configuration for the synthetic-corpus experiment."""
    return ModelConfig(
        model=ArchConfig(
            d_in=8, d=8, n_q=3, k=16, v=8,
            enc_hidden=32, dec_hidden=32, spd_hidden=32,
        ),
        training=TrainingConfig(
            stage1_steps=1000, segment_len=150, batch_size=8,
            checkpoint_every=1000,
        ),
        mask=MaskConfig(
            temporal=MaskAxisConfig(0.5, 2, 10),
            feature=MaskAxisConfig(0.5, 2, 1),
        ),
        optimizer=OptimizerConfig(base_lr=3e-3, warmup_steps=100, total_steps=2000),
        seed=seed,
    )


def toy_config(seed: int = 0) -> ModelConfig:
    """Tiny dimensions for finite-difference gradient checks."""
    return ModelConfig(
        model=ArchConfig(
            d_in=4, d=3, n_q=2, k=4, v=3,
            enc_hidden=5, dec_hidden=5, spd_hidden=5, spd_context=1,
        ),
        training=TrainingConfig(stage1_steps=2, segment_len=6, batch_size=2, checkpoint_every=4),
        mask=MaskConfig(temporal=MaskAxisConfig(1.0, 1, 2), feature=MaskAxisConfig(1.0, 1, 1)),
        optimizer=OptimizerConfig(base_lr=1e-2, warmup_steps=1, total_steps=4),
        seed=seed,
    )
