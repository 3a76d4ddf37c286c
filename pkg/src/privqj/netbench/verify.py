"""Oracle and property suites shared by the ``verify`` command and the test suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from ..he import CostMeter, ReferenceHE
from ..mpc import drelu_protocol, share
from ..mpc.triples import TripleSource
from ..planner import (DotPlan, LayoutError, PlanError, SlotParams, build_chain_layout,
                       check_layout, corrupt_layout, plan_dot, plan_offline, plan_online)
from ..protocol import BlockSpec, LinearOp, Session, SessionConfig
from ..protocol.model import ModelConfig, build_model, builtin_config, random_queue, run_model
from ..ring import DEFAULT_P, ConvShape, conv_ref, drelu_ref, matmul_mod, out_dims, relu_ref
from .runs import random_kernel


@dataclass(frozen=True)
class Sizes:
    layouts: int = 500
    blocks: int = 200
    drelu_random: int = 10_000
    uniform: int = 100_000
    conv: int = 50

    @classmethod
    def quick(cls) -> "Sizes":
        return cls(layouts=100, blocks=20, drelu_random=2000, uniform=20_000, conv=10)


@dataclass
class SuiteResult:
    name: str
    ok: bool
    checked: int
    failures: int
    detail: str = ""
    seconds: float = 0.0


# -- independent oracles ------------------------------------------------------------

def naive_conv(x: np.ndarray, k: np.ndarray, shape: ConvShape, p: int) -> np.ndarray:
    """Direct sliding-window convolution with Python integers."""
    h_o, w_o = out_dims(shape)
    x = x.reshape(shape.C_i, shape.H_i, shape.W_i)
    if shape.padding == "same":
        # total padding that lets the last window fit, the smaller half before
        ph = max((h_o - 1) * shape.stride + shape.H_f - shape.H_i, 0) // 2
        pw = max((w_o - 1) * shape.stride + shape.W_f - shape.W_i, 0) // 2
    else:
        ph = pw = 0
    out = np.zeros((shape.C_o, h_o, w_o), dtype=np.int64)
    for o in range(shape.C_o):
        for i in range(h_o):
            for j in range(w_o):
                acc = 0
                for c in range(shape.C_i):
                    for u in range(shape.H_f):
                        for v in range(shape.W_f):
                            r, s = i * shape.stride + u - ph, j * shape.stride + v - pw
                            if 0 <= r < shape.H_i and 0 <= s < shape.W_i:
                                acc += int(k[o, c, u, v]) * int(x[c, r, s])
                out[o, i, j] = acc % p
    return out


def random_small_shape(rng, max_c: int = 8, max_h: int = 12) -> ConvShape:
    f = int(rng.choice([1, 3, 5]))
    h = int(rng.integers(max(1, f if rng.random() < 0.5 else 1), max_h + 1))
    padding = "same" if h < f or rng.random() < 0.6 else "valid"
    stride = int(rng.choice([1, 1, 2]))
    return ConvShape(int(rng.integers(1, max_c + 1)), h, h, int(rng.integers(1, max_c + 1)),
                     f, f, stride, padding)


# -- suites -------------------------------------------------------------------------

def suite_conv(rng, n: int) -> SuiteResult:
    fails = 0
    for _ in range(n):
        sh = random_small_shape(rng, 4, 7)
        p = int(rng.choice([257, DEFAULT_P]))
        x = rng.integers(0, p, size=(sh.C_i, sh.H_i, sh.W_i), dtype=np.int64)
        k = random_kernel(sh, p, rng)
        fails += not np.array_equal(conv_ref(x, k, sh, p), naive_conv(x, k, sh, p))
    return SuiteResult("conv_ref vs direct convolution", fails == 0, n, fails)


def suite_matmul(rng, n: int) -> SuiteResult:
    fails = 0
    for _ in range(n):
        p = int(rng.choice([257, DEFAULT_P, (1 << 61) - 1]))
        a = rng.integers(0, p, size=(int(rng.integers(1, 6)), int(rng.integers(1, 300))),
                         dtype=np.int64)
        b = rng.integers(0, p, size=(a.shape[1], int(rng.integers(1, 6))), dtype=np.int64)
        want = (a.astype(object) @ b.astype(object)) % p
        fails += not np.array_equal(matmul_mod(a, b, p).astype(object), want)
    return SuiteResult("matmul_mod vs big-integer product", fails == 0, n, fails)


def suite_he(rng, n: int) -> SuiteResult:
    fails = 0
    for _ in range(n):
        p = int(rng.choice([257, DEFAULT_P]))
        N = 64
        he = ReferenceHE(N, p, CostMeter())
        key = he.keygen("client")
        a, b, c = (rng.integers(0, p, size=N, dtype=np.int64) for _ in range(3))
        ea, eb = he.encrypt(a, key, "online/inqueue"), he.encrypt(b, key, "online/inqueue")
        s = he.decrypt(he.add(ea, eb, "online/inqueue"), key, "online/inqueue")
        m = he.decrypt(he.cmult(c, he.add(ea, eb, "online/inqueue"), "online/inqueue"), key,
                       "online/inqueue")
        fails += not (np.array_equal(s, (a + b) % p)
                      and np.array_equal(m, (c * ((a + b) % p)) % p)
                      and he.meter.get("rot") == 0 and he.meter.get("extr") == 0)
    return SuiteResult("HE homomorphism", fails == 0, n, fails)


def suite_drelu_exhaustive(mode: str, seed: int) -> SuiteResult:
    """Every share pair (x0, x1) in Z_257 x Z_257."""
    p = 257
    x0, x1 = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    x0, x1 = x0.reshape(-1), x1.reshape(-1)
    rng = np.random.default_rng(seed)
    bits = drelu_protocol(x0, x1, p, source=TripleSource(mode, rng), rng=rng)
    got = (bits.h0 ^ bits.h1).astype(np.int64)
    fails = int((got != drelu_ref((x0 + x1) % p, p)).sum())
    return SuiteResult(f"DReLU exhaustive p=257 ({mode})", fails == 0, x0.size, fails)


def suite_drelu_random(mode: str, n: int, seed: int) -> SuiteResult:
    p = DEFAULT_P
    rng = np.random.default_rng(seed)
    x = rng.integers(0, p, size=n, dtype=np.int64)
    # hit the sign boundaries explicitly
    edge = np.array([0, 1, p // 2 - 1, p // 2, p // 2 + 1, p - 1], dtype=np.int64)
    x[:edge.size] = edge
    x0 = rng.integers(0, p, size=n, dtype=np.int64)
    x1 = (x - x0) % p
    bits = drelu_protocol(x0, x1, p, source=TripleSource(mode, rng), rng=rng)
    fails = int(((bits.h0 ^ bits.h1).astype(np.int64) != drelu_ref(x, p)).sum())
    return SuiteResult(f"DReLU random default prime ({mode})", fails == 0, n, fails)


def random_layout(rng):
    """A random plan (online, offline conv, or dot) with a batch sized to host its priors."""
    while True:
        N = 1 << int(rng.integers(4, 11))
        params = SlotParams(N, 257)
        kind = rng.choice(["online", "offline", "dot"])
        try:
            if kind == "dot":
                plan = plan_dot(int(rng.integers(1, 3 * N)), int(rng.integers(1, 20)), params)
            else:
                sh = random_small_shape(rng, 16, 24)
                plan = plan_online(sh, params) if kind == "online" else plan_offline(sh, params)
        except PlanError:
            continue
        if not plan.recycles or plan.per_prior_batch > 64:
            continue
        n_pri = int(rng.integers(1, 4))
        n_batch = plan.per_prior_batch * n_pri + int(rng.integers(0, 4))
        priors = [f"P{k}" for k in range(n_pri)]
        return plan, build_chain_layout(plan, list(range(n_batch)), priors)


def suite_layouts(rng, n: int, fault: str | None = None) -> SuiteResult:
    """Checker pass over random layouts; with ``fault`` each layout is damaged first."""
    fails, kinds, msgs = 0, set(), []
    for _ in range(n):
        plan, lay = random_layout(rng)
        kinds.add("dot" if isinstance(plan, DotPlan) else type(plan).__name__)
        if fault:
            lay = corrupt_layout(lay, rng, fault)
        try:
            check_layout(lay)
        except LayoutError as exc:
            fails += 1
            if len(msgs) < 3:
                msgs.append(str(exc))
    name = "layout cover/conservation" + (f" [fault={fault}]" if fault else "")
    detail = "; ".join(msgs) if msgs else f"kinds={sorted(kinds)}"
    return SuiteResult(name, fails == 0, n, fails, detail)


def block_instance(rng, p: int, seed: int, merge: bool = False):
    """One random small ReLU-conv block with priors; returns (ok, session)."""
    sh = random_small_shape(rng)
    N = 1 << int(rng.integers(4, 9))
    params = SlotParams(N, p)
    op = LinearOp.conv(random_kernel(sh, p, rng), sh)
    try:
        nb = op.online_plan(params).per_prior_batch or 1
    except PlanError:
        nb = 1
    nb = min(nb, 12) + int(rng.integers(0, 3))
    n_pri = int(rng.integers(1, 3))
    batch, priors = list(range(nb)), [f"P{k}" for k in range(n_pri)]
    xs = {i: rng.integers(0, p, size=op.in_len, dtype=np.int64) for i in batch + priors}
    sh_ = {i: share(xs[i], p, rng) for i in xs}
    sess = Session(SessionConfig(params, seed=seed, merge_final_share=merge))
    st = sess.run_block(BlockSpec(op), batch, priors, {i: s.x0 for i, s in sh_.items()},
                        {i: s.x1 for i, s in sh_.items()})
    out = st.reconstruct(p)
    ok = all(np.array_equal(out[i], conv_ref(relu_ref(xs[i], p).reshape(sh.C_i, sh.H_i, sh.W_i),
                                             op.weight, sh, p).reshape(-1)) for i in xs)
    ok = ok and sess.meter.get("rot") == 0 and sess.meter.get("extr") == 0
    sess.close()
    return ok, sess, sh


def suite_blocks(rng, n: int, seed: int) -> SuiteResult:
    fails, shapes = 0, set()
    for k in range(n):
        p = 257 if k % 2 == 0 else DEFAULT_P
        ok, _, sh = block_instance(rng, p, seed + k, merge=bool(k % 3 == 0))
        shapes.add(sh)
        fails += not ok
    return SuiteResult("block end-to-end vs oracle", fails == 0, n, fails,
                       f"{len(shapes)} distinct shapes")


def suite_toy_model(seed: int) -> SuiteResult:
    fails, n = 0, 0
    cfg = ModelConfig.load(builtin_config("toy"))
    for N, p in ((512, 257), (512, DEFAULT_P)):
        model = build_model(cfg, p)
        queue = random_queue(6, 1, tuple(cfg.input), p, seed)
        res = run_model(model, queue, SessionConfig(SlotParams(N, p), seed=seed))
        for it in queue:
            n += 1
            fails += not np.array_equal(res.outputs[it.id], model.oracle(it.x))
        fails += res.session.meter.get("rot") + res.session.meter.get("extr")
    return SuiteResult("toy model vs composed oracle", fails == 0, n, fails)


def collect_views(n_samples: int, seed: int, p: int = 257,
                  shape: ConvShape = ConvShape(8, 12, 12, 4, 3, 3), N: int = 2048):
    """Server-decrypted t values and client-received y - x_dot values, as flat arrays."""
    rng = np.random.default_rng(seed)
    params = SlotParams(N, p)
    op = LinearOp.conv(random_kernel(shape, p, rng), shape)
    nb = op.online_plan(params).per_prior_batch or 1
    t_vals, y_vals, run = [], [], 0
    while sum(v.size for v in t_vals) < n_samples or sum(v.size for v in y_vals) < n_samples:
        sess = Session(SessionConfig(params, seed=seed + run))
        sess.server.view, sess.client.view = [], []
        batch, priors = list(range(nb)), ["P0"]
        xs = {i: rng.integers(0, p, size=op.in_len, dtype=np.int64) for i in batch + priors}
        sh = {i: share(xs[i], p, rng) for i in xs}
        sess.run_block(BlockSpec(op), batch, priors, {i: s.x0 for i, s in sh.items()},
                       {i: s.x1 for i, s in sh.items()})
        t_vals += sess.server.view
        y_vals += sess.client.view
        sess.close()
        run += 1
    return (np.concatenate(t_vals)[:n_samples], np.concatenate(y_vals)[:n_samples])


def chi_square_uniform(v: np.ndarray, p: int) -> float:
    counts = np.bincount(v, minlength=p)
    return float(stats.chisquare(counts).pvalue)


def suite_uniformity(n: int, seed: int, alpha: float = 0.01) -> list[SuiteResult]:
    t, y = collect_views(n, seed)
    out = []
    for name, v in (("t (server view)", t), ("y - x_dot (client view)", y)):
        pv = chi_square_uniform(v, 257)
        out.append(SuiteResult(f"chi-square uniformity of {name}", pv >= alpha, v.size,
                               int(pv < alpha), f"p-value={pv:.4f}"))
    return out


SUITES = ("conv", "matmul", "he", "drelu", "layouts", "blocks", "toy", "uniform")


def run_all(seed: int = 0, sizes: Sizes = Sizes(), fault: str | None = None,
            only=None) -> list[SuiteResult]:
    """Run the selected suites; failures are reported, never raised."""
    rng = np.random.default_rng(seed)
    chosen = set(only or SUITES)
    plan = [
        ("conv", lambda: [suite_conv(rng, sizes.conv)]),
        ("matmul", lambda: [suite_matmul(rng, sizes.conv)]),
        ("he", lambda: [suite_he(rng, sizes.conv)]),
        ("drelu", lambda: [suite_drelu_exhaustive(m, seed) for m in ("dealer", "ot")]
         + [suite_drelu_random(m, sizes.drelu_random, seed) for m in ("dealer", "ot")]),
        ("layouts", lambda: [suite_layouts(rng, sizes.layouts)]
         + ([suite_layouts(rng, sizes.layouts, fault)] if fault else [])),
        ("blocks", lambda: [suite_blocks(rng, sizes.blocks, seed)]),
        ("toy", lambda: [suite_toy_model(seed)]),
        ("uniform", lambda: suite_uniformity(sizes.uniform, seed)),
    ]
    out = []
    for name, fn in plan:
        if name not in chosen:
            continue
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:        # report, keep going
            res = [SuiteResult(name, False, 0, 1, f"{type(exc).__name__}: {exc}")]
        dt = (time.perf_counter() - t0) / max(1, len(res))
        out += [replace(r, seconds=round(dt, 3)) for r in res]
    return out
