import math

import numpy as np
import pytest

from rvqsta.training import AdamState, NonFiniteError, adam_step, cosine_lr


def test_schedule_endpoints():
    assert cosine_lr(0, 3e-4, 4000, 250_000) == 0.0
    assert cosine_lr(4000, 3e-4, 4000, 250_000) == pytest.approx(3e-4, rel=1e-15)
    assert cosine_lr(250_000, 3e-4, 4000, 250_000) == pytest.approx(0.0, abs=1e-20)


def test_schedule_shape():
    assert cosine_lr(2000, 3e-4, 4000, 250_000) == pytest.approx(1.5e-4)
    mid = 4000 + (250_000 - 4000) // 2
    assert cosine_lr(mid, 3e-4, 4000, 250_000) == pytest.approx(1.5e-4)
    lrs = [cosine_lr(s, 1.0, 10, 100) for s in range(101)]
    assert all(a <= b for a, b in zip(lrs[:10], lrs[1:11]))
    assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
    assert all(0.0 <= x <= 1.0 for x in lrs)


def test_schedule_errors():
    with pytest.raises(ValueError):
        cosine_lr(250_001, 3e-4, 4000, 250_000)
    with pytest.raises(ValueError):
        cosine_lr(-1, 3e-4, 4000, 250_000)
    with pytest.raises(ValueError):
        cosine_lr(0, 1.0, 10, 10)


def test_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p), lr=0.1)
    assert np.array_equal(new["w"], p["w"])
    assert state.t == 1


def test_first_step_by_hand():
    p = {"w": np.array([0.0])}
    new, state = adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p), lr=0.1)
    # m = 0.5, v = 0.1; bias-corrected both give 1, so the step is lr / (1 + eps)
    assert state.m["w"][0] == 0.5 and state.v["w"][0] == pytest.approx(0.1)
    assert new["w"][0] == pytest.approx(-0.1, rel=1e-7)


def test_two_steps_match_recurrence():
    b1, b2, eps, lr = 0.5, 0.9, 1e-8, 0.01
    p = {"w": np.array([1.0])}
    st = AdamState.zeros_like(p)
    m = v = 0.0
    w = 1.0
    for t, g in enumerate([0.3, -1.2], start=1):
        p, st = adam_step(p, {"w": np.array([g])}, st, lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    assert p["w"][0] == pytest.approx(w, rel=1e-14)


def test_zero_lr_leaves_params(rng):
    p = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    g = {k: rng.normal(size=v.shape) for k, v in p.items()}
    new, _ = adam_step(p, g, AdamState.zeros_like(p), lr=0.0)
    for k in p:
        assert np.array_equal(new[k], p[k])


def test_inputs_not_mutated_and_untouched_params_kept(rng):
    p = {"a": rng.normal(size=3), "frozen": rng.normal(size=2)}
    before = {k: v.copy() for k, v in p.items()}
    st = AdamState.zeros_like(p)
    new, st2 = adam_step(p, {"a": np.ones(3)}, st, lr=0.1)
    assert all(np.array_equal(p[k], before[k]) for k in p)
    assert np.all(st.m["a"] == 0) and st.t == 0
    assert new["frozen"] is p["frozen"]
    assert np.array_equal(st2.m["frozen"], np.zeros(2))


def test_nonfinite_gradient_rejected():
    p = {"w": np.zeros(2)}
    with pytest.raises(NonFiniteError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState.zeros_like(p), lr=0.1)
