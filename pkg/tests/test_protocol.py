import numpy as np
import pytest

from privqj.mpc import share
from privqj.netbench.runs import record_block, replay_block, run_block
from privqj.planner import SlotParams
from privqj.protocol import (BlockSpec, LinearOp, ModelConfig, Session, SessionConfig,
                             build_model, builtin_config, model_summary, plan_block, random_queue,
                             run_model)
from privqj.ring import DEFAULT_P, ConvShape, conv_ref, out_dims, relu_ref

SMALL = [ConvShape(4, 8, 8, 4, 3, 3), ConvShape(8, 6, 6, 16, 3, 3, 2),
         ConvShape(3, 7, 7, 5, 1, 1, 1, "valid")]


def zero_prior_he(run, phase=None):
    return not any(run.he(phase, "prior").values())


@pytest.mark.parametrize("p", [257, DEFAULT_P])
@pytest.mark.parametrize("shape", SMALL, ids=lambda s: s.label())
def test_block_matches_plaintext_oracle(shape, p):
    run = run_block(shape, SlotParams(2048, p), seed=3, check=True)
    assert run.correct
    assert run.prior_deltas()["prior_online_bytes"] == 8 * shape.C_o * np.prod(out_dims(shape))
    if not run.fallback_online:
        assert zero_prior_he(run, "online")
    if not run.fallback_offline:
        assert zero_prior_he(run, "offline")


def test_prior_half_round_and_merge():
    sh = SMALL[1]
    plain = run_block(sh, SlotParams(2048, 257), seed=1, check=True)
    merged = run_block(sh, SlotParams(2048, 257), seed=1, check=True, merge=True)
    assert plain.correct and merged.correct
    assert plain.transcript.rounds("prior", "online") == 0.5
    assert merged.transcript.rounds("prior", "online") == 0
    # the unmerged prior frame follows the in-queue reply in the same direction,
    # so it costs its own half round without adding a whole-transcript alternation
    assert merged.transcript.rounds(phase="online") == plain.transcript.rounds(phase="online")
    assert len(merged.transcript.entries) == len(plain.transcript.entries) - 1
    assert merged.transcript.bytes("prior") == plain.transcript.bytes("prior")


def test_differential_against_no_prior_run():
    sh = SMALL[1]
    with_p = run_block(sh, SlotParams(2048, 257), seed=4)
    # same offline pool (batch plus reserves) in both runs
    reserves = [("reserve", i) for i in range(with_p.pool - len(with_p.batch))]
    without = run_block(sh, SlotParams(2048, 257), seed=4, with_priors=False, pool_extra=reserves)
    assert reserves
    assert with_p.he() == without.he()
    assert with_p.transcript.bytes("inqueue") == without.transcript.bytes("inqueue")


def test_linear_only_block_prior_costs_one_round():
    run = run_block(SMALL[0], SlotParams(2048, 257), seed=2, relu=False, check=True)
    assert run.correct
    assert run.transcript.rounds("prior", "online") == 1.0
    assert run.transcript.bytes("common_drelu") == 0


def test_offline_fallback_is_still_correct():
    run = run_block(SMALL[0], SlotParams(2048, 257), seed=5, check=True)
    assert run.fallback_offline == ["P0"]
    assert run.correct
    assert run.he("offline", "prior")["enc"] > 0


def test_online_fallback_when_batch_too_small():
    sh = SMALL[1]
    params = SlotParams(2048, 257)
    op = LinearOp.conv(np.ones((16, 8, 3, 3), np.int64), sh)
    need = op.online_plan(params).inqueue_needed(3)
    run = run_block(sh, params, seed=6, n_batch=max(0, need - 1), n_priors=3, check=True)
    assert run.fallback_online
    assert run.correct


def test_dot_block_and_several_priors(rng):
    p, params = 257, SlotParams(1024, 257)
    w = rng.integers(0, p, size=(10, 60))
    op = LinearOp.dot(w)
    ids = list(range(5)) + ["P0", "P1"]
    xs = {i: rng.integers(0, p, size=60) for i in ids}
    sh = {i: share(xs[i], p, rng) for i in ids}
    sess = Session(SessionConfig(params, seed=1))
    bp = plan_block(BlockSpec(op), params, ids[:5], ids[5:])
    x1 = sess.offline(bp, {i: s.x1 for i, s in sh.items()})
    x0 = sess.online(bp, {i: s.x0 for i, s in sh.items()})
    sess.close()
    for i in ids:
        assert np.array_equal((x0[i] + x1[i]) % p, w @ relu_ref(xs[i], p) % p)


def test_plan_block_rejects_overlap():
    op = LinearOp.conv(np.zeros((4, 4, 3, 3), np.int64), SMALL[0])
    with pytest.raises(ValueError):
        plan_block(BlockSpec(op), SlotParams(2048, 257), [0, 1], [1])


def test_linear_op_apply_matches_conv_ref(rng):
    sh = SMALL[1]
    k = rng.integers(0, 257, size=(16, 8, 3, 3))
    x = rng.integers(0, 257, size=(8, 6, 6))
    op = LinearOp.conv(k, sh)
    assert np.array_equal(op.apply(x.reshape(-1), 257), conv_ref(x, k, sh, 257).reshape(-1))


@pytest.mark.parametrize("p", [257, DEFAULT_P])
def test_toy_model_end_to_end(p):
    cfg = ModelConfig.load(builtin_config("toy"))
    model = build_model(cfg, p)
    queue = random_queue(6, 1, cfg.input, p, seed=2)
    res = run_model(model, queue, SessionConfig(SlotParams(512, p), seed=2))
    res.session.close()
    for it in queue:
        assert np.array_equal(res.outputs[it.id], model.oracle(it.x))
    for rep in res.layers:
        if rep.type in ("conv", "dot") and not rep.fallback:
            assert rep.prior_he_total() == 0
    assert res.totals()


def test_unchained_configs_are_analytic_only():
    cfg = ModelConfig.load(builtin_config("vgg"))
    assert not cfg.chained
    rows = model_summary(cfg, SlotParams())
    assert rows and all(r["prior_online_bytes"] > 0 for r in rows)
    with pytest.raises(ValueError):
        run_model(build_model(cfg, 257), [])


def test_record_and_replay(tmp_path):
    run = run_block(SMALL[2], SlotParams(1024, 257), seed=8, record=True)
    path = tmp_path / "block.pqj"
    record_block(run, path)
    same, again = replay_block(path)
    assert same
    assert again.meter == run.meter
