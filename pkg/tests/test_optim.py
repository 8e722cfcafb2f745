import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clipita import encoders as E
from clipita import synthetic as S
from clipita.optim import (AdaBeliefState, AGCConfig, PairSet, ScheduleConfig, TrainConfig,
                           TrainingError, adabelief_step, agc_clip, cosine_lr, read_metrics, train)
from clipita.tensor import DimensionError


# -------------------------------------------------------------------- AGC

def test_agc_no_clip_returns_same_object():
    g, w = np.full(4, 1e-4), np.ones(4)
    assert agc_clip(g, w) is g


def test_agc_clips_to_bound():
    w = np.array([1.0, 0.0])
    g = np.array([0.3, 0.4])  # norm 0.5
    assert np.linalg.norm(agc_clip(g, w, AGCConfig(0.01))) == pytest.approx(0.01, abs=1e-12)


def test_agc_norm_floor():
    out = agc_clip(np.array([0.6, 0.8]), np.zeros(2), AGCConfig(0.01, 1e-3))
    assert np.linalg.norm(out) == pytest.approx(0.01 * 1e-3, abs=1e-15)


def test_agc_zero_grad_and_errors():
    g = np.zeros(3)
    assert agc_clip(g, np.ones(3)) is g
    with pytest.raises(DimensionError):
        agc_clip(np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        AGCConfig(clip_ratio=0.0)


def test_agc_norm_bounds_1000_triples():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 3))))
        g = rng.normal(size=shape) * 10 ** rng.uniform(-4, 2)
        w = rng.normal(size=shape) * 10 ** rng.uniform(-5, 1)
        cfg = AGCConfig(float(10 ** rng.uniform(-3, 0)))
        out = agc_clip(g, w, cfg)
        gn, on = np.linalg.norm(g), np.linalg.norm(out)
        assert on <= gn * (1 + 1e-12)
        assert on <= cfg.clip_ratio * max(np.linalg.norm(w), cfg.norm_floor) * (1 + 1e-12)


# -------------------------------------------------------------- AdaBelief

def test_adabelief_scalar_hand_example():
    # five update lines by hand: m = 0.1, s = 0.001 * 0.81 + 1e-8,
    # m_hat = 1, s_hat = s / 0.001, step = -lr * m_hat / (sqrt(s_hat) + eps)
    params = {"w": np.array(0.0)}
    new, state = adabelief_step(params, {"w": np.array(1.0)}, AdaBeliefState.zeros_like(params), 1e-3)
    assert new["w"] - 0.0 == pytest.approx(-1.1111e-3, abs=1e-6)
    assert state.t == 1
    assert float(state.m["w"]) == pytest.approx(0.1, abs=1e-15)
    assert float(state.s["w"]) == pytest.approx(0.001 * 0.81 + 1e-8, abs=1e-15)


def test_adabelief_zero_grad_barely_moves():
    params = {"w": np.ones((2, 3))}
    new, _ = adabelief_step(params, {"w": np.zeros((2, 3))}, AdaBeliefState.zeros_like(params), 1e-3)
    assert np.abs(new["w"] - params["w"]).max() < 1e-3 * 1e-3


def test_adabelief_matches_loop_oracle():
    rng = np.random.default_rng(5)
    theta = rng.normal(size=3)
    params = {"w": theta.copy()}
    state = AdaBeliefState.zeros_like(params)
    m = s = np.zeros(3)
    for t in range(1, 11):
        g = rng.normal(size=3)
        params, state = adabelief_step(params, {"w": g}, state, 0.01)
        m = 0.9 * m + 0.1 * g
        s = 0.999 * s + 0.001 * (g - m) ** 2 + 1e-8
        theta = theta - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(s / (1 - 0.999 ** t)) + 1e-8)
        assert np.all(state.s["w"] >= 0)
    np.testing.assert_allclose(params["w"], theta, rtol=0, atol=1e-14)
    assert state.t == 10


def test_adabelief_rejects_negative_lr():
    params = {"w": np.zeros(1)}
    with pytest.raises(ValueError):
        adabelief_step(params, {"w": np.ones(1)}, AdaBeliefState.zeros_like(params), -1.0)


def test_frozen_groups_bit_identical_after_100_steps():
    vocab = E.build_vocab(["a b c"])
    params = E.init_params(E.ModelConfig(embed_dim=3, patch_size=4, image_size=8, hidden_dim=4), vocab)
    params = E.set_frozen(params, image_tower=True, text_tower=True)
    before = {g: params.group_bytes(g) for g in E.GROUPS}
    state = AdaBeliefState.zeros_like(params.arrays)
    rng = np.random.default_rng(0)
    for _ in range(100):
        grads = {n: rng.normal(size=a.shape) for n, a in params.arrays.items()}
        params, state = adabelief_step(params, grads, state, 1e-2)
    assert params.group_bytes("image_tower") == before["image_tower"]
    assert params.group_bytes("text_tower") == before["text_tower"]
    assert params.group_bytes("image_proj") != before["image_proj"]


def test_state_round_trip():
    params = {"a": np.ones(2), "b": np.zeros((2, 2))}
    state = AdaBeliefState.zeros_like(params)
    _, state = adabelief_step(params, {"a": np.ones(2), "b": np.ones((2, 2))}, state, 0.1)
    again = AdaBeliefState.from_arrays(state.as_arrays(), state.t)
    for k in params:
        np.testing.assert_array_equal(again.m[k], state.m[k])
        np.testing.assert_array_equal(again.s[k], state.s[k])


# --------------------------------------------------------------- schedule

def test_cosine_endpoints_and_midpoint():
    cfg = ScheduleConfig(1e-3, 1e-6, 1000)
    assert abs(cosine_lr(0, cfg) - 1e-3) < 1e-12
    assert abs(cosine_lr(1000, cfg) - 1e-6) < 1e-12
    assert abs(cosine_lr(500, cfg) - (1e-3 + 1e-6) / 2) < 1e-12
    assert cosine_lr(5000, cfg) == 1e-6
    with pytest.raises(ValueError):
        cosine_lr(-1, cfg)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 500))
def test_cosine_monotone(a, b, total):
    cfg = ScheduleConfig(max(a, b), min(a, b), total)
    lrs = [cosine_lr(t, cfg) for t in range(total + 1)]
    assert all(x >= y for x, y in zip(lrs, lrs[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(1e-6, 1e-3)
    with pytest.raises(ValueError):
        ScheduleConfig(total_steps=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(eval_every=0)


# ---------------------------------------------------------------- trainer

def _tiny_run(tmp_path, name, augment=False, **train_kw):
    ids, images, captions = S.make_pairs(48, seed=3)
    train_set = PairSet(ids[:40], images[:40], captions[:40])
    eval_set = PairSet(ids[40:], images[40:], captions[40:])
    params = E.init_params(E.ModelConfig(hidden_dim=16, embed_dim=8), E.build_vocab(train_set.captions))
    cfg = TrainConfig(**{"batch_size": 8, "eval_every": 5, "eval_unit": "step", "augment": augment,
                         "checkpoint_dir": str(tmp_path / name), **train_kw})
    return train(params, train_set, eval_set, cfg, ScheduleConfig(1e-2, 1e-6, 20, True),
                 ScheduleConfig(1e-2, 1e-6, 20))


def test_trainer_contracts(tmp_path):
    res = _tiny_run(tmp_path, "a", augment=True)
    ck = res.checkpoint_dir
    for name in ("init.ckpt", "phase1.ckpt", "best.ckpt", "last.ckpt"):
        assert (ck / name).exists()
    # towers untouched by phase 1
    for group in ("image_tower", "text_tower"):
        assert E.checkpoint_group_bytes(ck / "init.ckpt", group) == \
            E.checkpoint_group_bytes(ck / "phase1.ckpt", group)
    assert E.checkpoint_group_bytes(ck / "init.ckpt", "image_proj") != \
        E.checkpoint_group_bytes(ck / "phase1.ckpt", "image_proj")
    records = read_metrics(ck / "metrics.jsonl")
    assert records == json.loads(json.dumps(res.records))
    assert {1, 2} == {r["phase"] for r in records}
    assert records[0]["step"] == 0 and records[0]["train_loss"] is None
    # best checkpoint is the minimum of logged eval losses
    assert res.best_eval_loss == min(r["eval_loss"] for r in records)
    assert E.load_checkpoint(ck / "best.ckpt").meta["eval_loss"] == res.best_eval_loss
    assert res.best_eval_loss < records[0]["eval_loss"]
    last = E.load_checkpoint(ck / "last.ckpt")
    assert any(k.startswith("s/") for k in last.optimizer)


def test_trainer_is_deterministic(tmp_path):
    a = _tiny_run(tmp_path, "a", augment=True)
    b = _tiny_run(tmp_path, "b", augment=True)
    assert (a.checkpoint_dir / "metrics.jsonl").read_bytes() == (b.checkpoint_dir / "metrics.jsonl").read_bytes()
    for name in a.final.arrays:
        assert a.final.arrays[name].tobytes() == b.final.arrays[name].tobytes()


def test_phase1_patience_stops_early(tmp_path):
    # an absurd improvement threshold makes every evaluation a stall
    res = _tiny_run(tmp_path, "p", patience=2, min_rel_improvement=10.0)
    phase1_steps = max(r["step"] for r in res.records if r["phase"] == 1)
    assert phase1_steps == 10


def test_trainer_errors(tmp_path):
    ids, images, captions = S.make_pairs(8, seed=0)
    params = E.init_params(E.ModelConfig(hidden_dim=4, embed_dim=2), E.build_vocab(captions))
    full = PairSet(ids, images, captions)
    empty = PairSet([], images[:0], [])
    sched = ScheduleConfig(total_steps=1)
    with pytest.raises(ValueError):
        train(params, full, empty, TrainConfig(batch_size=2, checkpoint_dir=str(tmp_path)), sched, sched)
    with pytest.raises(ValueError):
        train(params, full, full, TrainConfig(batch_size=16, checkpoint_dir=str(tmp_path)), sched, sched)
    bad = E.ModelParams(params.config, {k: v * np.nan for k, v in params.arrays.items()}, params.vocab)
    with pytest.raises(TrainingError, match="step 0"):
        train(bad, full, full, TrainConfig(batch_size=2, checkpoint_dir=str(tmp_path)), sched, sched)
