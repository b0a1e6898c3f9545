import json

import numpy as np
import pytest

from rvqsta.core import toy_config, with_overrides
from rvqsta.corpus import make_synthetic_corpus
from rvqsta.layers import mlp_backward
from rvqsta.training import (
    DISTILLED,
    GROUND_TRUTH,
    CorpusError,
    backward,
    backward_and_step,
    check_config_stages,
    forward,
    gradient_check,
    init_state,
    load_checkpoint,
    relative_error,
    rng_stream,
    save_checkpoint,
    toy_batch,
    train,
)
from rvqsta.training.model import ForwardError, frozen_values, trainable_codebooks


def toy_corpus(cfg, n=6, T=12, seed=0):
    feats, labels = make_synthetic_corpus(n, T, cfg.model.d_in, cfg.model.v, seed=seed,
                                          min_run=2, max_run=4)
    return list(zip(feats, labels))


def short(cfg, total=8, stage1=4, **extra):
    return with_overrides(cfg, {"optimizer.total_steps": total, "training.stage1_steps": stage1,
                                "training.checkpoint_every": total, **extra})


def test_rng_streams_independent_and_reproducible():
    a, b = rng_stream(0, "init").normal(size=4), rng_stream(0, "init").normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng_stream(0, "masking").normal(size=4))
    assert not np.array_equal(a, rng_stream(1, "init").normal(size=4))


def test_straight_through_contract(toy_cfg, batch):
    cfg = with_overrides(toy_cfg, {"toggles.bt": False, "training.commitment_weight": 0.0})
    state = init_state(cfg)
    res = forward(state.params, cfg, *batch, "stage1")
    grads = backward(res, state.params, cfg)
    p = state.params
    g_xhat = 2.0 * (res.xhat - res.x) / res.x.size
    g_zhat, *_ = mlp_backward(g_xhat, res.zhat, res.cache["h_dec"], p["dec.w1"], p["dec.w2"], cfg.model.activation)
    _, gw1, gb1, gw2, gb2 = mlp_backward(g_zhat, res.x, res.cache["h_enc"], p["enc.w1"], p["enc.w2"],
                                         cfg.model.activation)
    # d recon / d z must be exactly d recon / d zhat
    assert np.array_equal(grads["enc.w1"], gw1) and np.array_equal(grads["enc.b2"], gb2)


def test_decoder_sees_quantized_latent(toy_cfg, batch, toy_state):
    res = forward(toy_state.params, toy_cfg, *batch, "stage1")
    assert np.array_equal(res.cache["dec_in"], res.zhat)
    again = forward(toy_state.params, toy_cfg, *batch, "stage1", frozen=frozen_values(res))
    np.testing.assert_allclose(again.cache["dec_in"], res.zhat, atol=1e-15)
    assert again.total_loss == pytest.approx(res.total_loss, rel=1e-14)


def test_stage1_uses_ground_truth_tokens(toy_cfg, batch, toy_state):
    res = forward(toy_state.params, toy_cfg, *batch, "stage1")
    assert res.tokens_used == GROUND_TRUTH and res.spd_loss is None
    assert np.array_equal(res.qout.codes[0], batch[1].reshape(-1))
    assert res.total_loss == res.codec_loss


def test_stage2_uses_distilled_tokens(toy_cfg, batch, toy_state):
    res = forward(toy_state.params, toy_cfg, *batch, "stage2")
    assert res.tokens_used == DISTILLED
    assert np.array_equal(res.qout.codes[0], np.argmax(res.logits, axis=-1).reshape(-1))
    assert res.total_loss == res.codec_loss + 5.0 * res.spd_loss


def test_inference_ignores_mask(toy_cfg, batch, toy_state):
    keep = np.zeros((2, 6, toy_cfg.model.d))
    a = forward(toy_state.params, toy_cfg, batch[0], None, "inference", keep=keep)
    b = forward(toy_state.params, toy_cfg, batch[0], None, "inference")
    assert np.array_equal(a.logits, b.logits) and a.keep is None


def test_mask_applies_only_to_spd_input(toy_cfg, batch, toy_state):
    keep = np.zeros((2, 6, toy_cfg.model.d))
    res = forward(toy_state.params, toy_cfg, *batch, "stage2", keep=keep)
    free = forward(toy_state.params, toy_cfg, *batch, "stage2")
    assert np.array_equal(res.z, free.z)
    # fully zeroed SPD input: every frame sees the same window -> same logits
    flat = res.logits.reshape(-1, toy_cfg.model.v)
    assert np.allclose(flat, flat[0])


def test_forward_errors(toy_cfg, batch, toy_state):
    with pytest.raises(ForwardError):
        forward(toy_state.params, toy_cfg, batch[0], None, "stage1")
    with pytest.raises(ForwardError):
        forward(toy_state.params, toy_cfg, batch[0][..., :2], batch[1], "stage1")
    with pytest.raises(ForwardError):
        forward(toy_state.params, toy_cfg, *batch, "stage3")


def test_zero_residual_without_sta():
    cfg = with_overrides(toy_config(), {"toggles.sta": False, "toggles.bt": False, "model.n_q": 1})
    state = init_state(cfg)
    x, tok = toy_batch(cfg, 1)
    res = forward(state.params, cfg, x, tok, "stage1")
    params = dict(state.params)
    params["codebook.0"] = np.vstack([res.z.reshape(-1, cfg.model.d)])
    cfg2 = with_overrides(cfg, {"model.k": params["codebook.0"].shape[0]})
    res2 = forward(params, cfg2, x, tok, "stage1")
    assert np.all(res2.qout.final_residual == 0.0)
    assert res2.commitment_loss == 0.0


def test_loss_decomposition_and_lambda(toy_cfg, batch, toy_state):
    state = toy_state
    reports = []
    for _ in range(toy_cfg.optimizer.total_steps):
        state, rep = backward_and_step(state, batch)
        reports.append(rep)
    for rep in reports:
        assert rep.total_loss == rep.recomputed_total()
        assert rep.commitment_weight == 0.25
    stage2 = [r for r in reports if r.stage == 2]
    assert stage2 and all(r.lambda_spd == 5.0 and r.spd_loss is not None for r in stage2)
    for r in stage2:
        assert r.total_loss == r.codec_loss + 5.0 * r.spd_loss


def test_tc_off_freezes_first_codebook(toy_cfg, batch):
    cfg = with_overrides(toy_cfg, {"toggles.tc": False})
    state = init_state(cfg)
    before = state.params["codebook.0"].copy()
    for _ in range(cfg.optimizer.total_steps):
        state, _ = backward_and_step(state, batch)
    assert state.params["codebook.0"].tobytes() == before.tobytes()
    assert not np.array_equal(state.params["codebook.1"], init_state(cfg).params["codebook.1"])
    assert trainable_codebooks(cfg) == [1]


def test_stage_invariants_and_boundary(toy_cfg):
    cfg = short(toy_cfg, total=8, stage1=5)
    _, reports = train(cfg, toy_corpus(cfg))
    assert [r.step for r in reports] == list(range(8))
    for r in reports:
        if r.step < 5:
            assert r.stage == 1 and r.tokens_used == GROUND_TRUTH and r.spd_loss is None
        else:
            assert r.stage == 2 and r.tokens_used == DISTILLED and r.spd_loss is not None
    assert reports[5].tokens_used == DISTILLED


def test_mask_toggle_off_gives_empty_plans(toy_cfg):
    on = short(toy_cfg)
    off = with_overrides(on, {"toggles.mask": False})
    _, rep_on = train(on, toy_corpus(on))
    _, rep_off = train(off, toy_corpus(off))
    assert all(r.mask_spans == 0 for r in rep_off)
    assert all(r.mask_spans > 0 for r in rep_on if r.stage == 2)  # toy masks always fire


def test_training_is_deterministic(toy_cfg, tmp_path):
    cfg = short(toy_cfg)
    corpus = toy_corpus(cfg)
    s1, r1 = train(cfg, corpus, tmp_path / "a")
    s2, r2 = train(cfg, corpus, tmp_path / "b")
    assert [r.to_json() for r in r1] == [r.to_json() for r in r2]
    for name in s1.params:
        assert s1.params[name].tobytes() == s2.params[name].tobytes()
    for f in ("train_log.jsonl", "checkpoint_0000008.stap", "checkpoint_0000008.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    lines = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 8 and json.loads(lines[0])["step"] == 0


def test_seed_changes_run(toy_cfg):
    cfg = short(toy_cfg)
    corpus = toy_corpus(cfg)
    _, a = train(cfg, corpus)
    _, b = train(with_overrides(cfg, {"seed": 1}), corpus)
    assert [r.total_loss for r in a] != [r.total_loss for r in b]


def test_checkpoint_round_trip(toy_cfg, tmp_path, batch):
    state = init_state(toy_cfg)
    state, _ = backward_and_step(state, batch)
    path = tmp_path / "ck.stap"
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    assert back.step == 1 and back.cfg == toy_cfg and back.adam.t == 1
    for name, arr in state.params.items():
        np.testing.assert_array_equal(back.params[name], arr.astype(np.float32))
    assert set(back.adam.m) == set(state.adam.m)
    assert back.rngs["masking"].random() == state.rngs["masking"].random()
    manifest = json.loads(path.with_suffix(".json").read_text())
    assert manifest["config_hash"] == toy_cfg.hash() and manifest["stage"] == 1


def test_tampered_checkpoint_manifest(toy_cfg, tmp_path):
    path = tmp_path / "ck.stap"
    save_checkpoint(init_state(toy_cfg), path)
    man = json.loads(path.with_suffix(".json").read_text())
    man["config"]["seed"] = 99
    path.with_suffix(".json").write_text(json.dumps(man))
    with pytest.raises(CorpusError, match="hash"):
        load_checkpoint(path)


def test_corpus_validation(toy_cfg):
    feats = np.zeros((3, toy_cfg.model.d_in))
    with pytest.raises(CorpusError, match="segment_len"):
        train(toy_cfg, [(feats, np.zeros(3, int))])
    with pytest.raises(CorpusError, match="token out of range"):
        train(toy_cfg, [(np.zeros((8, 4)), np.full(8, 3))])
    with pytest.raises(CorpusError, match="d_in"):
        train(toy_cfg, [(np.zeros((8, 5)), np.zeros(8, int))])


def test_dead_codes_reset(toy_cfg):
    cfg = short(with_overrides(toy_cfg, {"training.dead_code_steps": 2, "model.k": 12}), total=6, stage1=5)
    _, reports = train(cfg, toy_corpus(cfg))
    assert sum(r.codes_reset for r in reports) > 0


def test_relative_error_floor():
    assert relative_error(0.0, 1e-12) == 0.0
    assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


def test_linear_toy_gradient_exact():
    cfg = with_overrides(toy_config(), {"model.activation": "identity", "model.quantizer": False,
                                        "toggles.spd": False, "toggles.bt": False,
                                        "toggles.sta": False, "toggles.mask": False})
    res = gradient_check(init_state(cfg), toy_batch(cfg, 0), mode="stage1", samples_per_param=100)
    assert res.skipped == 0 and res.checked > 20
    assert res.max_rel_error < 1e-8


@pytest.mark.parametrize("overrides", [
    {},
    {"toggles.sta": False},
    {"toggles.bt": False},
    {"toggles.tc": False},
    {"toggles.mask": False},
    {"training.spd_grad_to_encoder": False},
])
def test_gradient_check_variants(overrides):
    cfg = with_overrides(toy_config(), overrides)
    for seed in (0, 1):
        out = check_config_stages(cfg, seed=seed)
        assert set(out) == {"stage1", "stage2"}
        for r in out.values():
            assert r.checked > 0
            assert r.max_rel_error < 1e-4, (overrides, seed, r.per_param)


def test_spd_grads_do_not_reach_encoder_when_disabled(batch):
    cfg = with_overrides(toy_config(), {"training.spd_grad_to_encoder": False})
    state = init_state(cfg)
    res = forward(state.params, cfg, *batch, "stage2")
    g_with = backward(res, state.params, with_overrides(cfg, {"training.spd_grad_to_encoder": True}))
    g_without = backward(res, state.params, cfg)
    assert not np.array_equal(g_with["enc.w1"], g_without["enc.w1"])
    assert np.array_equal(g_with["spd.w1"], g_without["spd.w1"])
