import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from privqj.netbench.verify import random_layout
from privqj.planner import (IDLE, PRIOR, LayoutError, PlanError, SlotParams, build_chain_layout,
                            check_layout, corrupt_layout, model_batch_size, parse_shape,
                            plan_dot, plan_offline, plan_online, plan_online_len, segment_shape)
from privqj.ring import ConvShape

P = SlotParams()

# [PAPER] published per-prior batch sizes (online, offline) for H_i,C_i,f_h,C_o at N=8192
TABLE = [
    ("56,64,3,64", 49, 4), ("28,128,3,128", 17, 30), ("14,256,3,256", 7, 82),
    ("7,512,3,512", 4, 990), ("112,64,3,128", 1, 4), ("56,128,3,256", 1, 4),
    ("56,256,3,256", 1, 4), ("28,256,3,512", 49, 30), ("28,512,3,512", 1, 30),
    ("14,512,3,512", 17, 82), ("27,96,5,256", 19, 130), ("13,256,3,384", 8, 144),
    ("13,384,3,384", 102, 144), ("13,384,3,256", 102, 144),
]


def bsize(v):
    return 1 if v is None else v


@pytest.mark.parametrize("shape,online,offline", TABLE)
def test_reference_bsizes(shape, online, offline):
    sh = parse_shape(shape)
    assert bsize(plan_online(sh, P).per_prior_batch) == online
    got = bsize(plan_offline(sh, P).per_prior_batch)
    if shape == "27,96,5,256":
        # documented mismatch: same padding gives 55, not the published 130
        assert got == 55
    else:
        assert got == offline


def test_online_examples():
    pl = plan_online(ConvShape(64, 56, 56, 64, 3, 3), P)
    assert (pl.s_hat, pl.per_prior_batch) == (4096, 49)
    pl = plan_online(ConvShape(64, 112, 112, 128, 3, 3), P)
    assert pl.s_hat == 0 and pl.per_prior_batch is None and not pl.recycles
    pl = plan_online(ConvShape(128, 28, 28, 128, 3, 3), P)
    assert (pl.g, pl.group_inqueue, pl.group_priors, pl.per_prior_batch) == (2048, 49, 3, 17)


def test_offline_examples():
    pl = plan_offline(parse_shape("56,64,3,64"), P)
    assert (pl.rows_per_ct, pl.n, pl.s_tilde, pl.per_prior_batch) == (2, 288, 1920, 4)
    pl = plan_offline(parse_shape("7,512,3,512"), P)
    assert (pl.rows_per_ct, pl.n, pl.s_tilde) == (167, 28, 9)
    assert pl.per_prior_batch == math.ceil(4608 / 28) * math.ceil(49 / 9) == 990
    pl = plan_offline(parse_shape("14,256,3,256"), P)
    assert (pl.n, pl.s_tilde, pl.per_prior_batch) == (57, 156, 82)
    pl = plan_offline(parse_shape("112,64,3,128"), P)
    assert pl.wide_row and pl.s_tilde == 2 * 8192 - 12544
    assert pl.per_prior_batch == math.ceil(12544 / 3840)


def test_dot_examples():
    assert not plan_dot(8192, 10, P).recycles
    pl = plan_dot(6, 4, SlotParams(8, 257))
    assert (pl.rows_per_ct, pl.idle, pl.per_prior_batch) == (1, 2, 3)
    pl = plan_dot(9216, 4096, P)
    assert pl.wide_row and pl.idle == 7168


def test_toy_online_layout():
    pl = plan_online_len(6, SlotParams(8, 257))
    assert pl.s_hat == 2 and pl.per_prior_batch == 3
    lay = build_chain_layout(pl, [0, 1, 2], ["P"])
    check_layout(lay)
    pieces = [(a.host, a.elem_lo, a.width) for a in lay.prior_pieces("P")]
    assert pieces == [(0, 0, 2), (1, 2, 2), (2, 4, 2)]


def test_no_recycling_layout_errors():
    pl = plan_online_len(8, SlotParams(8, 257))
    with pytest.raises(PlanError, match="no recycling"):
        build_chain_layout(pl, [0], ["P"])


def test_batch_too_small():
    pl = plan_online_len(6, SlotParams(8, 257))
    with pytest.raises(PlanError):
        build_chain_layout(pl, [0, 1], ["P"])


@given(st.integers(1, 5000), st.integers(3, 13))
def test_online_conservation(length, logn):
    pl = plan_online_len(length, SlotParams(1 << logn, 257))
    assert pl.s_hat == -(-length // pl.N) * pl.N - length
    assert pl.group_inqueue * pl.s_hat == pl.group_priors * length
    if pl.recycles:
        assert pl.per_prior_batch == -(-length // pl.s_hat)
        assert pl.per_prior_batch * pl.s_hat >= length
    else:
        assert pl.per_prior_batch is None


@given(st.integers(1, 8), st.integers(1, 30), st.sampled_from([1, 3, 5]), st.integers(4, 13))
def test_offline_capacity(c_i, h, f, logn):
    if h < f:
        h = f
    sh = ConvShape(c_i, h, h, 2, f, f)
    pl = plan_offline(sh, SlotParams(1 << logn, 257))
    if not pl.recycles:
        return
    if not pl.wide_row:
        assert pl.rows_per_ct >= 1
        assert pl.rows_per_ct == pl.N // sh.out_cols and pl.s_tilde == pl.N % sh.out_cols
    # recycled capacity covers one prior's full im2col matrix
    assert pl.per_prior_batch * pl.tails_per_input * pl.s_tilde >= sh.rows * sh.out_cols


def test_random_layouts_pass(rng):
    for _ in range(200):
        _, lay = random_layout(rng)
        check_layout(lay)


@pytest.mark.parametrize("mode", ["overlap", "drop", "shift"])
def test_checker_catches_faults(rng, mode):
    for _ in range(40):
        _, lay = random_layout(rng)
        with pytest.raises(LayoutError):
            check_layout(corrupt_layout(lay, rng, mode))


def test_prior_order_ascending(rng):
    for _ in range(50):
        plan, lay = random_layout(rng)
        if lay.kind != "online":
            continue
        for q in {a.owner for a in lay.assignments if a.role == PRIOR}:
            lo = [a.elem_lo for a in lay.prior_pieces(q)]
            assert lo == sorted(lo)


def test_idle_ranges_only_at_tails():
    pl = plan_online_len(6, SlotParams(8, 257))
    lay = build_chain_layout(pl, [0, 1, 2, 3], ["P"])
    check_layout(lay)
    assert [a.host for a in lay.assignments if a.role == IDLE] == [3]


def test_segment_shape():
    sh = ConvShape(64, 56, 56, 64, 3, 3)
    assert segment_shape(sh, 100, P) == [sh]
    parts = segment_shape(sh, 25, P)
    assert sum(s.C_i for s in parts) == 64
    for s in parts:
        pl = plan_online(s, P)
        assert pl.per_prior_batch is None or pl.per_prior_batch <= 25
    with pytest.raises(PlanError):
        segment_shape(sh, 0, P)


def test_model_batch_size():
    shapes = ["27,96,5,256", "13,256,3,384", "13,384,3,384", "13,384,3,256"]
    plans = [plan_online(parse_shape(s), P) for s in shapes]
    assert [p.per_prior_batch for p in plans] == [19, 8, 102, 102]
    assert model_batch_size(plans).batch_size == 102
    assert model_batch_size(plans[:1]).batch_size == 19
    mb = model_batch_size([plans[0], plan_online(parse_shape("112,64,3,128"), P)])
    assert mb.new_run_blocks == (1,)


def test_online_and_offline_are_independent():
    sh = parse_shape("28,256,3,512")
    assert plan_online(sh, P).per_prior_batch != plan_offline(sh, P).per_prior_batch


def test_params_validation():
    with pytest.raises(PlanError):
        SlotParams(12, 257)
    with pytest.raises(ValueError):
        parse_shape("1,2,3")


def test_plan_table_runtime():
    import time
    from privqj.planner import plan_rows
    t = time.perf_counter()
    rows = plan_rows([parse_shape(s) for s, _, _ in TABLE], P)
    assert time.perf_counter() - t < 1.0
    assert [r["online_bsize"] for r in rows] == [o for _, o, _ in TABLE]


def test_dot_layouts_cover(rng):
    for n_i, n_o, N in [(6, 4, 8), (20, 3, 8), (100, 7, 64), (9, 9, 16)]:
        pl = plan_dot(n_i, n_o, SlotParams(N, 257))
        if not pl.recycles:
            continue
        lay = build_chain_layout(pl, list(range(pl.per_prior_batch * 2)), ["A", "B"])
        check_layout(lay)
        assert np.all([lay.complete(q) for q in ("A", "B")])
