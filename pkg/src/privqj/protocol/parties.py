"""Client and server state machines for one ReLU-linear block.

Every method consumes and produces wire payloads (bytes), so the session can
move them over any channel. Public data (the block plan and layouts) is shared;
secret data lives in exactly one party object.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..he import PlainTable, ReferenceHE
from ..planner import (OnlinePlan, PlanError, SlotParams, build_offline_layout,
                       build_online_layout)
from ..ring import addmod, mulmod, submod
from ..transport import pack_residues, unpack_residues
from .linear import LinearOp
from .packing import ConvOfflinePacker, DotOfflinePacker, OnlinePacker, PriorAssembly

INQ, PRI = "inqueue", "prior"


@dataclass
class BlockSpec:
    op: LinearOp
    relu: bool = True
    name: str = ""


@dataclass
class BlockPlan:
    """Public per-block agreement: plans, layouts, and which inputs ride where."""
    spec: BlockSpec
    params: SlotParams
    batch: list
    priors: list
    pool: list                      # offline hosts (batch first, then reserves)
    on_plan: OnlinePlan
    off_plan: object
    on_hosts: list = field(default_factory=list)       # (host, kind)
    off_hosts: list = field(default_factory=list)
    on_ride: list = field(default_factory=list)         # priors riding online tails
    off_ride: list = field(default_factory=list)
    on_packers: dict = field(default_factory=dict)      # host -> OnlinePacker
    off_packers: dict = field(default_factory=dict)
    fallback_online: list = field(default_factory=list)
    fallback_offline: list = field(default_factory=list)
    layouts: list = field(default_factory=list)

    @property
    def ids(self) -> list:
        return list(self.batch) + list(self.priors)


def plan_block(spec: BlockSpec, params: SlotParams, batch, priors=(), pool_extra=None) -> BlockPlan:
    """Decide tail riding vs dedicated runs and build the layouts.

    The offline pool is the batch plus reserve inputs, so that the offline
    per-prior batch can differ from the online one; reserves only receive
    offline material.
    """
    batch, priors = list(batch), list(priors)
    if set(batch) & set(priors):
        raise ValueError("an input cannot be both in-queue and prior")
    op = spec.op
    on_plan = op.online_plan(params)
    off_plan = op.offline_plan(params)
    need_off = (off_plan.per_prior_batch or 0) * len(priors) if off_plan.recycles else 0
    if pool_extra is None:
        pool_extra = [("reserve", i) for i in range(max(0, need_off - len(batch)))]
    pool = batch + list(pool_extra)
    bp = BlockPlan(spec, params, batch, priors, pool, on_plan, off_plan)

    # online
    if spec.relu:
        ride = priors if (priors and on_plan.recycles
                          and len(batch) >= on_plan.inqueue_needed(len(priors))) else []
        bp.on_ride = ride
        bp.fallback_online = [q for q in priors if q not in ride]
        if batch:
            lay = build_online_layout(on_plan, batch, ride)
            bp.layouts.append(lay)
            pk = OnlinePacker(on_plan, lay)
            bp.on_hosts += [(h, INQ) for h in batch]
            bp.on_packers.update({h: pk for h in batch})
        if bp.fallback_online:
            lay = build_online_layout(on_plan, bp.fallback_online, [])
            pk = OnlinePacker(on_plan, lay)
            bp.on_hosts += [(q, PRI) for q in bp.fallback_online]
            bp.on_packers.update({q: pk for q in bp.fallback_online})

    # offline
    ride = priors if (priors and off_plan.recycles and len(pool) >= need_off) else []
    bp.off_ride = ride
    bp.fallback_offline = [q for q in priors if q not in ride]
    make = ConvOfflinePacker if op.kind == "conv" else DotOfflinePacker
    if pool:
        lay = build_offline_layout(off_plan, pool, ride)
        bp.layouts.append(lay)
        pk = make(off_plan, lay)
        bp.off_hosts += [(h, INQ) for h in pool]
        bp.off_packers.update({h: pk for h in pool})
    if bp.fallback_offline:
        lay = build_offline_layout(off_plan, bp.fallback_offline, [])
        pk = make(off_plan, lay)
        bp.off_hosts += [(q, PRI) for q in bp.fallback_offline]
        bp.off_packers.update({q: pk for q in bp.fallback_offline})
    return bp


class _PriorOffline:
    """Accumulates a prior's offline linear result from tail partials."""

    def __init__(self, op: LinearOp, off_plan):
        self.kind = op.kind
        if op.kind == "conv":
            self.acc = np.zeros((op.shape.C_o, off_plan.row_len), dtype=np.int64)
            self.need = off_plan.rows * off_plan.row_len
        else:
            self.acc = np.zeros(op.out_len, dtype=np.int64)
            self.need = off_plan.n_o * off_plan.n_i
        self.done = 0

    def add(self, tail, partial, p: int) -> None:
        if self.kind == "conv":
            sl = self.acc[:, tail.col_lo:tail.col_hi]
            self.acc[:, tail.col_lo:tail.col_hi] = addmod(sl, partial, p)
        else:
            self.acc[tail.rows] = addmod(self.acc[tail.rows], partial, p)
        self.done += len(tail.rows) * (tail.col_hi - tail.col_lo)

    @property
    def complete(self) -> bool:
        return self.done == self.need


def _cat(phase: str, kind: str) -> str:
    return f"{phase}/{kind}"


class ServerParty:
    def __init__(self, he: ReferenceHE, rng: np.random.Generator):
        self.he, self.p, self.rng = he, he.p, rng
        self.key = he.keygen("server")
        self.view: list | None = None      # decrypted t values, when recording

    # -- setup -------------------------------------------------------------
    def begin_block(self, bp: BlockPlan, x1: dict) -> None:
        self.bp = bp
        op = bp.spec.op
        self.x1 = {i: np.asarray(x1[i], dtype=np.int64).reshape(-1) for i in bp.ids}
        self.h1 = {i: self.rng.integers(0, 2, size=op.in_len, dtype=np.int64) for i in bp.ids}
        self.xdot = {i: self.rng.integers(0, self.p, size=op.out_len, dtype=np.int64) for i in bp.ids}
        self.xddot: dict = {}
        self.prior_off = {q: _PriorOffline(op, bp.off_plan) for q in bp.off_ride}
        self.assembly = {q: PriorAssembly(op.in_len) for q in bp.on_ride}
        self.sent_prior: set = set()
        self.table = PlainTable(op.table(), self.p) if op.kind == "conv" else None

    # -- offline: encrypted h1 and x1 (1 - 2 h1) ------------------------------
    def online_material(self, host, kind: str) -> tuple[bytes, int]:
        pk = self.bp.on_packers[host]
        rides = {q: None for q in self.bp.on_ride}
        h1e = pk.scatter(host, self.h1[host], {q: self.h1[q] for q in rides})
        x1e = pk.scatter(host, self.x1[host], {q: self.x1[q] for q in rides})
        xm = mulmod(x1e, (1 - 2 * h1e) % self.p, self.p)
        N, cat = self.he.N, _cat("offline", kind)
        cts = [self.he.encrypt(v[c * N:(c + 1) * N], self.key, cat)
               for v in (h1e, xm) for c in range(len(v) // N)]
        return self.he.serialize_many(cts), len(cts)

    # -- offline: masked linear evaluation on the client's r0 ciphertexts ----
    def offline_eval(self, host, kind: str, payload: bytes) -> tuple[bytes, int]:
        bp, he, p = self.bp, self.he, self.p
        cts = he.deserialize_many(payload)
        pk = bp.off_packers[host]
        cat = _cat("offline", kind)
        op = bp.spec.op
        if op.kind == "conv":
            table = self.table
            outs, masks = [], []
            for idx, grp in pk.groups(host):
                V = self.rng.integers(0, p, size=(table.rows, he.N), dtype=np.int64)
                outs += he.lincomb_table([cts[i] for i in idx], table, None, cat, offset=V,
                                         groups=grp)
                masks.append(V)
            head = pk.decode_head(masks, p)
        else:
            outs, rows = [], []
            for u, plain in pk.out_plain(host, op.weight):
                V = self.rng.integers(0, p, size=he.N, dtype=np.int64)
                outs.append(he.add(he.cmult(plain, cts[u], cat), V, cat))
                rows.append(V)
            masks = np.stack(rows)
            head = pk.decode_head(masks, p)
        # the client will decode r0*k + decode(V); so x_ddot = -decode(V)
        self.xddot[host] = (-head.reshape(-1)) % p
        tail = pk.tail(host)
        if tail is not None:
            part = pk.decode_tail(masks, host) if op.kind == "conv" else pk.decode_tail(masks, host, p)
            self.prior_off[tail.prior].add(tail, part, p)
        return he.serialize_many(outs), len(outs)

    def offline_done(self) -> dict:
        for q, acc in self.prior_off.items():
            if not acc.complete:
                raise PlanError(f"prior {q!r} offline result incomplete")
            self.xddot[q] = (-acc.acc.reshape(-1)) % self.p
        return self.next_share()

    def next_share(self) -> dict:
        return {i: addmod(self.xddot[i], self.xdot[i], self.p) for i in self.bp.ids}

    # -- online ------------------------------------------------------------
    def drelu_input(self) -> tuple[np.ndarray, np.ndarray]:
        x1s, h1s = [], []
        for host, _ in self.bp.on_hosts:
            pk = self.bp.on_packers[host]
            rides = {q: self.x1[q] for q in self.bp.on_ride}
            x1s.append(pk.scatter(host, self.x1[host], rides))
            h1s.append(pk.scatter(host, self.h1[host], {q: self.h1[q] for q in self.bp.on_ride}))
        if not x1s:
            return np.zeros(0, np.int64), np.zeros(0, np.uint8)
        return np.concatenate(x1s), np.concatenate(h1s).astype(np.uint8)

    def _y(self, i, t) -> bytes:
        op, p = self.bp.spec.op, self.p
        z = addmod(mulmod(self.x1[i], self.h1[i], p), t, p)
        return pack_residues(submod(op.apply(z, p), self.xdot[i], p))

    def online_reply(self, host, kind: str, payload: bytes) -> tuple[bytes, list]:
        """y - x_dot for the host; priors completed by its tail fragments."""
        he, pk = self.he, self.bp.on_packers[host]
        cts = he.deserialize_many(payload)
        cat = _cat("online", kind)
        t = he.decrypt_many(cts, self.key, cat).reshape(-1)
        done = []
        if self.view is not None:
            self.view.append(pk.head(t).copy())
        for q, elem, vals in pk.fragments(host, t):
            if self.view is not None:
                self.view.append(np.array(vals, copy=True))
            asm = self.assembly[q]
            asm.add(elem, vals)
            if asm.complete and q not in self.sent_prior:
                done.append(q)
        return self._y(host, pk.head(t)), done

    def prior_reply(self, q) -> bytes:
        asm = self.assembly.get(q)
        if asm is None or not asm.complete:
            raise PlanError(f"prior {q!r} assembly incomplete")
        self.sent_prior.add(q)
        return self._y(q, asm.values)

    def linear_reply(self, i, payload: bytes) -> bytes:
        """Blocks without ReLU: the client's plain x0 - r0 arrives directly."""
        t = unpack_residues(payload)
        op, p = self.bp.spec.op, self.p
        return pack_residues(submod(op.apply(addmod(self.x1[i], t, p), p), self.xdot[i], p))


class ClientParty:
    def __init__(self, he: ReferenceHE, rng: np.random.Generator):
        self.he, self.p, self.rng = he, he.p, rng
        self.key = he.keygen("client")
        self.view: list | None = None      # received y - x_dot values, when recording

    def begin_block(self, bp: BlockPlan) -> None:
        self.bp = bp
        op = bp.spec.op
        ids = list(bp.ids) + [h for h in bp.pool if h not in bp.batch]
        self.r0 = {i: self.rng.integers(0, self.p, size=op.in_len, dtype=np.int64) for i in ids}
        self.r0k: dict = {}
        self._lowered: dict = {}
        self.prior_off = {q: _PriorOffline(op, bp.off_plan) for q in bp.off_ride}
        self.material: dict = {}
        self.y: dict = {}

    # -- offline -------------------------------------------------------------
    def receive_material(self, host, payload: bytes) -> None:
        cts = self.he.deserialize_many(payload)
        m = len(cts) // 2
        self.material[host] = (cts[:m], cts[m:])

    def offline_r0(self, host, kind: str) -> tuple[bytes, int]:
        bp, op = self.bp, self.bp.spec.op
        pk = bp.off_packers[host]
        own = op.lowered(self.r0[host])
        for q in bp.off_ride:
            if q not in self._lowered:
                self._lowered[q] = op.lowered(self.r0[q])
        slots = pk.pack(host, own, self._lowered)
        cat = _cat("offline", kind)
        cts = [self.he.encrypt(row, self.key, cat) for row in slots]
        return self.he.serialize_many(cts), len(cts)

    def offline_receive(self, host, kind: str, payload: bytes) -> None:
        bp, he, p = self.bp, self.he, self.p
        op, pk = bp.spec.op, bp.off_packers[host]
        cat = _cat("offline", kind)
        cts = he.deserialize_many(payload)
        plain = he.decrypt_many(cts, self.key, cat)
        if op.kind == "conv":
            C_o = op.shape.C_o
            outs = [plain[g * C_o:(g + 1) * C_o] for g in range(len(cts) // C_o)]
            head = pk.decode_head(outs, p)
        else:
            outs = plain
            head = pk.decode_head(outs, p)
        self.r0k[host] = head.reshape(-1)
        tail = pk.tail(host)
        if tail is not None:
            part = pk.decode_tail(outs, host) if op.kind == "conv" else pk.decode_tail(outs, host, p)
            self.prior_off[tail.prior].add(tail, part, p)

    def offline_done(self) -> None:
        for q, acc in self.prior_off.items():
            if not acc.complete:
                raise PlanError(f"prior {q!r} offline result incomplete")
            self.r0k[q] = acc.acc.reshape(-1) % self.p

    # -- online ------------------------------------------------------------
    def set_input(self, x0: dict) -> None:
        self.x0 = {i: np.asarray(x0[i], dtype=np.int64).reshape(-1) for i in self.bp.ids}

    def drelu_input(self) -> np.ndarray:
        xs = []
        for host, _ in self.bp.on_hosts:
            pk = self.bp.on_packers[host]
            xs.append(pk.scatter(host, self.x0[host], {q: self.x0[q] for q in self.bp.on_ride}))
        return np.concatenate(xs) if xs else np.zeros(0, np.int64)

    def set_h0(self, h0: np.ndarray) -> None:
        self.h0, pos = {}, 0
        for host, _ in self.bp.on_hosts:
            n = self.bp.on_packers[host].ext_len
            self.h0[host] = np.asarray(h0[pos:pos + n], dtype=np.int64)
            pos += n

    def online_t(self, host, kind: str) -> tuple[bytes, int]:
        """[[t]] = (x0 h0 - r0) + x0 (1 - 2 h0) [[h1]] + h0 [[x1 (1 - 2 h1)]], slotwise."""
        he, p, N = self.he, self.p, self.he.N
        pk = self.bp.on_packers[host]
        rides = self.bp.on_ride
        x0 = pk.scatter(host, self.x0[host], {q: self.x0[q] for q in rides})
        r0 = pk.scatter(host, self.r0[host], {q: self.r0[q] for q in rides})
        h0 = self.h0[host]
        a = submod(mulmod(x0, h0, p), r0, p)
        b = mulmod(x0, (1 - 2 * h0) % p, p)
        enc_h1, enc_xm = self.material[host]
        cat = _cat("online", kind)
        out = []
        for c in range(len(enc_h1)):
            s = slice(c * N, (c + 1) * N)
            acc = he.add(he.cmult(b[s], enc_h1[c], cat), a[s], cat)
            out.append(he.add(acc, he.cmult(h0[s], enc_xm[c], cat), cat))
        return he.serialize_many(out), len(out)

    def receive_y(self, i, payload: bytes) -> None:
        self.y[i] = unpack_residues(payload)
        if self.view is not None:
            self.view.append(self.y[i].copy())

    def linear_t(self, i) -> bytes:
        return pack_residues(submod(self.x0[i], self.r0[i], self.p))

    def next_share(self) -> dict:
        missing = [i for i in self.bp.ids if i not in self.y]
        if missing:
            raise PlanError(f"no output share received for {missing}")
        return {i: addmod(self.r0k[i], self.y[i], self.p) for i in self.bp.ids}
