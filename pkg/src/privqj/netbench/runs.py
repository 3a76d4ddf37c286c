"""Engine-backed block runs and the metrics reported for them."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..he import OPS, PHASES
from ..mpc import share
from ..planner import SlotParams, parse_shape
from ..protocol import BlockSpec, LinearOp, Session, SessionConfig, plan_block
from ..ring import ConvShape, relu_ref
from ..transport import (PROFILES, Entry, NetProfile, Transcript, read_recording, rounds,
                         transfer_time, write_recording)
from .queue_sim import BlockCosts


@dataclass(frozen=True)
class OpCosts:
    """Modeled seconds per HE operation (artifact defaults, not measurements)."""
    enc: float = 2e-3
    dec: float = 5e-4
    add: float = 2e-5
    cmult: float = 1e-4
    rot: float = 2e-3
    extr: float = 5e-5

    def seconds(self, counts: dict) -> float:
        return sum(getattr(self, op) * n for op, n in counts.items())


def _kind(cat: str) -> str:
    return cat.split("/")[1]


def _sub(tr: Transcript, keep) -> Transcript:
    return Transcript(entries=[e for e in tr.entries if keep(e.category)])


@dataclass
class BlockRun:
    shape: ConvShape
    params: SlotParams
    batch: list
    priors: list
    transcript: Transcript
    meter: dict                 # "op/phase/kind" -> count
    fallback_online: list
    fallback_offline: list
    pool: int
    elapsed: float
    correct: bool | None = None
    config: dict = field(default_factory=dict)

    def he(self, phase: str | None = None, kind: str | None = None) -> dict:
        out = {op: 0 for op in OPS}
        for key, v in self.meter.items():
            op, ph, k = key.split("/")
            if phase in (None, ph) and kind in (None, k):
                out[op] += v
        return out

    def prior_deltas(self) -> dict:
        """What the prior adds: its own bytes, rounds and HE operations."""
        tr = self.transcript
        out = {"prior_online_bytes": tr.bytes("prior", "online"),
               "prior_offline_bytes": tr.bytes("prior", "offline"),
               "prior_online_rounds": tr.rounds("prior", "online"),
               "prior_offline_rounds": tr.rounds("prior", "offline")}
        for ph in PHASES:
            for op, v in self.he(ph, "prior").items():
                out[f"prior_he_{ph}_{op}"] = v
        return out

    def compute_seconds(self, op_costs: OpCosts, kind: str | None = None, exclude=None) -> float:
        tot = 0.0
        for key, v in self.meter.items():
            op, _, k = key.split("/")
            if (kind is None or k == kind) and k != exclude:
                tot += getattr(op_costs, op) * v
        return tot

    def costs(self, profile: NetProfile, op_costs: OpCosts = OpCosts()) -> BlockCosts:
        """Batch-run and prior-frame times for the queue simulator."""
        tr = self.transcript
        base = _sub(tr, lambda c: _kind(c) != "prior")
        batch_time = (transfer_time(base.bytes(), rounds(base), profile)
                      + self.compute_seconds(op_costs, exclude="prior"))
        frame = transfer_time(tr.bytes("prior", "online"), tr.rounds("prior", "online"), profile)
        frame += self.compute_seconds(op_costs, kind="prior")
        return BlockCosts.proportional(len(self.batch), batch_time, frame)

    def metrics(self, profiles=None, op_costs: OpCosts = OpCosts()) -> list[tuple[str, object]]:
        """Long-form (metric, value) rows; latency figures are modeled."""
        tr = self.transcript
        rows: list[tuple[str, object]] = [
            ("shape", self.shape.label()), ("N", self.params.N), ("p", self.params.p),
            ("batch", len(self.batch)), ("priors", len(self.priors)), ("offline_pool", self.pool),
            ("fallback_online", len(self.fallback_online)),
            ("fallback_offline", len(self.fallback_offline)),
            ("bytes_total", tr.bytes()),
        ]
        rows += [(f"bytes[{c}]", v) for c, v in sorted(tr.by_category().items())]
        rows += [("rounds_total", tr.rounds()), ("rounds_offline", tr.rounds(phase="offline")),
                 ("rounds_online", tr.rounds(phase="online"))]
        for key in sorted(self.meter):
            rows.append((f"he[{key}]", self.meter[key]))
        rows += [(f"he_total[{op}]", v) for op, v in self.he().items()]
        rows += list(self.prior_deltas().items())
        for name in (profiles or PROFILES):
            prof = PROFILES[name] if isinstance(name, str) else name
            c = self.costs(prof, op_costs)
            rows += [(f"modeled_comm_s[{prof.name}]", transfer_time(tr.bytes(), tr.rounds(), prof)),
                     (f"modeled_batch_s[{prof.name}]", c.batch_time),
                     (f"modeled_prior_added_s[{prof.name}]", c.prior_frame_time)]
        if self.correct is not None:
            rows.append(("oracle_match", self.correct))
        rows.append(("elapsed_s", round(self.elapsed, 3)))
        return rows


def random_kernel(shape: ConvShape, p: int, rng, bound: int | None = None) -> np.ndarray:
    dims = (shape.C_o, shape.C_i, shape.H_f, shape.W_f)
    if bound is None:
        return rng.integers(0, p, size=dims, dtype=np.int64)
    return rng.integers(-bound, bound + 1, size=dims) % p


def run_block(shape: ConvShape, params: SlotParams | None = None, seed: int = 0,
              n_batch: int | None = None, n_priors: int = 1, relu: bool = True,
              merge: bool = False, drelu_mode: str = "dealer", record: bool = False,
              check: bool = False, with_priors: bool = True, pool_extra=None) -> BlockRun:
    """One ReLU-conv block over ``n_batch`` in-queue inputs plus ``n_priors`` priors.

    ``n_batch`` defaults to the online per-prior batch size. With
    ``with_priors=False`` the same in-queue inputs run alone (for differential
    comparisons); ``pool_extra`` then fixes the offline reserve inputs.
    """
    params = params or SlotParams()
    p = params.p
    rng = np.random.default_rng(seed)
    op = LinearOp.conv(random_kernel(shape, p, rng), shape)
    if n_batch is None:
        n_batch = op.online_plan(params).per_prior_batch or 1
    batch = list(range(n_batch))
    priors = [f"P{k}" for k in range(n_priors)] if with_priors else []
    xs = {i: rng.integers(0, p, size=op.in_len, dtype=np.int64) for i in batch + priors}
    shares = {i: share(xs[i], p, rng) for i in xs}
    cfg = SessionConfig(params, seed=seed, drelu_mode=drelu_mode, merge_final_share=merge,
                        record=record)
    sess = Session(cfg)
    spec = BlockSpec(op, relu=relu, name=shape.label())
    t0 = time.perf_counter()
    bp = plan_block(spec, params, batch, priors, pool_extra)
    x1n = sess.offline(bp, {i: s.x1 for i, s in shares.items()})
    x0n = sess.online(bp, {i: s.x0 for i, s in shares.items()})
    elapsed = time.perf_counter() - t0
    correct = None
    if check:
        correct = all(np.array_equal((x0n[i] + x1n[i]) % p,
                                     op.apply(relu_ref(xs[i], p) if relu else xs[i], p))
                      for i in xs)
    conf = {"shape": shape.label(), "stride": shape.stride, "padding": shape.padding,
            "N": params.N, "p": params.p, "seed": seed, "n_batch": n_batch,
            "n_priors": n_priors, "relu": relu, "merge": merge, "drelu_mode": drelu_mode,
            "digest": cfg.digest()}
    run = BlockRun(shape, params, batch, priors, sess.transcript, sess.meter.snapshot(),
                   list(bp.fallback_online), list(bp.fallback_offline), len(bp.pool), elapsed,
                   correct, conf)
    run.session = sess
    sess.close()
    return run


def record_block(run: BlockRun, path) -> None:
    write_recording(path, {"block": run.config, "meter": run.meter}, run.session.transcript)


def replay_block(path) -> tuple[bool, BlockRun]:
    """Re-execute a recorded run; True iff every frame is reproduced byte for byte."""
    header, frames = read_recording(path)
    c = header["block"]
    shape = parse_shape(c["shape"], c["stride"], c["padding"])
    run = run_block(shape, SlotParams(c["N"], c["p"]), c["seed"], c["n_batch"], c["n_priors"],
                    c["relu"], c["merge"], c["drelu_mode"], record=True)
    again = list(run.session.transcript.frames)
    recorded = Transcript(entries=[Entry(**e) for e in header["entries"]])
    same = (again == frames and recorded.to_json() == run.transcript.to_json()
            and header["meter"] == run.meter)
    return same, run

