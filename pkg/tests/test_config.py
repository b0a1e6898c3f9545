import dataclasses

import pytest

from rvqsta.core import (
    ConfigError,
    ModelConfig,
    check_config,
    config_from_dict,
    desk_config,
    dump_config,
    load_config,
    full_config,
    save_config,
    toy_config,
    validate_config,
    with_overrides,
)


def test_full_defaults_are_valid():
    cfg = full_config()
    assert validate_config(cfg) == []
    assert (cfg.model.n_q, cfg.model.k, cfg.model.d) == (8, 1024, 128)
    assert cfg.training.lambda_spd == 5.0
    assert (cfg.optimizer.beta1, cfg.optimizer.beta2) == (0.5, 0.9)
    assert (cfg.optimizer.base_lr, cfg.optimizer.warmup_steps) == (3e-4, 4000)
    assert (cfg.training.stage1_steps, cfg.optimizer.total_steps) == (90_000, 250_000)
    assert (cfg.mask.temporal.prob, cfg.mask.temporal.num_spans, cfg.mask.temporal.span_len) == (0.5, 2, 10)
    assert (cfg.mask.feature.prob, cfg.mask.feature.num_spans, cfg.mask.feature.span_len) == (0.5, 2, 8)


@pytest.mark.parametrize("factory", [full_config, desk_config, toy_config])
def test_presets_validate(factory):
    assert validate_config(factory()) == []


def test_vocab_equal_to_codebook_ok():
    assert validate_config(with_overrides(full_config(), {"model.v": 1024, "model.k": 1024})) == []


def test_vocab_larger_than_codebook_rejected():
    cfg = with_overrides(full_config(), {"model.v": 2000, "model.k": 1024})
    problems = validate_config(cfg)
    assert len(problems) == 1
    assert "V ≤ K violated" in problems[0]
    assert problems[0].startswith("model.v")


def test_vocab_rule_only_applies_with_sta():
    cfg = with_overrides(full_config(), {"model.v": 2000, "toggles.sta": False})
    assert validate_config(cfg) == []


def test_default_stage_split_ok():
    cfg = with_overrides(full_config(), {"training.stage1_steps": 90000, "optimizer.total_steps": 250000})
    assert validate_config(cfg) == []


@pytest.mark.parametrize("override, field", [
    ({"training.stage1_steps": 250000}, "training.stage1_steps"),
    ({"mask.temporal.prob": 1.5}, "mask.temporal.prob"),
    ({"mask.feature.prob": -0.1}, "mask.feature.prob"),
    ({"mask.temporal.span_len": 0}, "mask.temporal.span_len"),
    ({"mask.feature.num_spans": -1}, "mask.feature.num_spans"),
    ({"model.k": 0}, "model.k"),
    ({"optimizer.warmup_steps": 250000}, "optimizer.warmup_steps"),
    ({"optimizer.beta1": 1.0}, "optimizer.beta1"),
    ({"model.activation": "relu"}, "model.activation"),
])
def test_single_field_violations_reported(override, field):
    problems = validate_config(with_overrides(full_config(), override))
    assert problems, override
    assert any(p.startswith(field) for p in problems)


def test_all_violations_reported_together():
    cfg = with_overrides(full_config(), {"model.v": 5000, "mask.temporal.prob": 2.0,
                                          "training.stage1_steps": 10**9})
    assert len(validate_config(cfg)) == 3
    with pytest.raises(ConfigError) as exc:
        check_config(cfg)
    assert len(exc.value.problems) == 3


def test_toml_round_trip(tmp_path):
    cfg = with_overrides(desk_config(seed=7), {"toggles.bt": False, "mask.feature.span_len": 3})
    path = tmp_path / "cfg.toml"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert "[mask.feature]" in path.read_text()


def test_partial_file_keeps_nested_defaults(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("seed = 3\n[mask.feature]\nprob = 1.0\n")
    cfg = load_config(path)
    assert cfg.seed == 3
    assert cfg.mask.feature.prob == 1.0
    assert cfg.mask.feature.span_len == 8
    assert cfg.mask.temporal == ModelConfig().mask.temporal


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[model]\nnq = 8\n")
    with pytest.raises(ConfigError, match="model.nq: unknown key"):
        load_config(path)


def test_type_mismatch_rejected():
    with pytest.raises(ConfigError, match="toggles.sta"):
        config_from_dict({"toggles": {"sta": 1}})
    with pytest.raises(ConfigError, match="model.k"):
        config_from_dict({"model": {"k": "big"}})


def test_toml_syntax_error_has_location(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[model\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(path)


def test_hash_tracks_content():
    a, b = desk_config(), desk_config()
    assert a.hash() == b.hash()
    assert dataclasses.replace(a, seed=1).hash() != a.hash()
    assert "seed = 0" in dump_config(a)
