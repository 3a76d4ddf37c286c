"""Deterministic single-threaded driver that joins the two parties through a Link."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..he import CostMeter, ReferenceHE
from ..mpc.drelu import drelu_protocol
from ..mpc.triples import TripleSource
from ..planner import SlotParams, check_layout
from ..transport import CLIENT, SERVER, FrameType, Link, pack_parts, unpack_parts
from .parties import INQ, PRI, BlockPlan, BlockSpec, ClientParty, ServerParty, plan_block


@dataclass
class SessionConfig:
    params: SlotParams = field(default_factory=SlotParams)
    seed: int = 0
    drelu_mode: str = "dealer"          # dealer | ot
    merge_final_share: bool = False
    wire_size: int | None = None        # modeled ciphertext bytes (default 16 N)
    channel: str = "memory"             # memory | tcp
    record: bool = False
    check_layouts: bool = True

    def digest(self) -> str:
        blob = json.dumps({"N": self.params.N, "p": self.params.p, "seed": self.seed,
                           "drelu": self.drelu_mode, "merge": self.merge_final_share,
                           "wire": self.wire_size}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class LayerShareState:
    x0: dict        # client
    x1: dict        # server

    def reconstruct(self, p) -> dict:
        return {i: (self.x0[i] + self.x1[i]) % p for i in self.x0}


@dataclass
class BlockReport:
    name: str
    plan: BlockPlan
    fallback_online: list
    fallback_offline: list


class Session:
    def __init__(self, cfg: SessionConfig | None = None):
        self.cfg = cfg or SessionConfig()
        ss = np.random.SeedSequence(self.cfg.seed)
        c_seed, s_seed, d_seed, x_seed = ss.spawn(4)
        self.meter = CostMeter()
        self.he = ReferenceHE(self.cfg.params.N, self.cfg.params.p, self.meter, self.cfg.wire_size)
        self.client = ClientParty(self.he, np.random.default_rng(c_seed))
        self.server = ServerParty(self.he, np.random.default_rng(s_seed))
        self.triples = TripleSource(self.cfg.drelu_mode, np.random.default_rng(d_seed))
        self.drelu_rng = np.random.default_rng(x_seed)
        kw = {"keep_frames": self.cfg.record}
        self.link = Link.tcp(**kw) if self.cfg.channel == "tcp" else Link.memory(**kw)
        self.reports: list[BlockReport] = []

    @property
    def p(self) -> int:
        return self.cfg.params.p

    @property
    def transcript(self):
        return self.link.transcript

    def close(self) -> None:
        self.link.close()

    def _ct(self, sender, payload: bytes, count: int, category: str):
        self.link.send(sender, FrameType.CT, payload, category, nbytes=count * self.he.wire_size)
        return self.link.recv(CLIENT if sender == SERVER else SERVER, FrameType.CT).payload

    def _plain(self, sender, payload: bytes, category: str):
        self.link.send(sender, FrameType.PLAIN, payload, category)
        return self.link.recv(CLIENT if sender == SERVER else SERVER, FrameType.PLAIN).payload

    # -- phases ---------------------------------------------------------------
    def offline(self, bp: BlockPlan, x1: dict) -> dict:
        """Offline phase of one block; returns the server's next-layer shares."""
        cl, sv = self.client, self.server
        if self.cfg.check_layouts:
            for lay in bp.layouts:
                check_layout(lay)
        sv.begin_block(bp, x1)
        cl.begin_block(bp)
        if bp.spec.relu:
            for host, kind in bp.on_hosts:
                payload, n = sv.online_material(host, kind)
                cl.receive_material(host, self._ct(SERVER, payload, n, f"offline/{kind}"))
        for host, kind in bp.off_hosts:
            payload, n = cl.offline_r0(host, kind)
            got = self._ct(CLIENT, payload, n, f"offline/{kind}")
            payload, n = sv.offline_eval(host, kind, got)
            cl.offline_receive(host, kind, self._ct(SERVER, payload, n, f"offline/{kind}"))
        cl.offline_done()
        return sv.offline_done()

    def online(self, bp: BlockPlan, x0: dict) -> dict:
        """Online phase; returns the client's next-layer shares."""
        cl, sv = self.client, self.server
        cl.set_input(x0)
        if bp.spec.relu:
            x0e = cl.drelu_input()
            x1e, h1e = sv.drelu_input()
            bits = drelu_protocol(x0e, x1e, self.p, h1=h1e, link=self.link, source=self.triples,
                                  rng=self.drelu_rng)
            cl.set_h0(bits.h0)
            for host, kind in bp.on_hosts:
                payload, n = cl.online_t(host, kind)
                got = self._ct(CLIENT, payload, n, f"online/{kind}")
                y, done = sv.online_reply(host, kind, got)
                self._deliver(host, kind, y, done)
        else:
            for i in bp.ids:
                kind = PRI if i in bp.priors else INQ
                t = self._plain(CLIENT, cl.linear_t(i), f"online/{kind}")
                cl.receive_y(i, self._plain(SERVER, sv.linear_reply(i, t), f"online/{kind}"))
        return cl.next_share()

    def _deliver(self, host, kind: str, y: bytes, done: list) -> None:
        cl, sv = self.client, self.server
        if not done:
            cl.receive_y(host, self._plain(SERVER, y, f"online/{kind}"))
            return
        shares = [sv.prior_reply(q) for q in done]
        if self.cfg.merge_final_share:
            payload = pack_parts([y] + shares)
            split = {f"online/{kind}": len(payload) - sum(len(s) for s in shares),
                     f"online/{PRI}": sum(len(s) for s in shares)}
            self.link.send(SERVER, FrameType.MERGED, payload, f"online/{kind}",
                           nbytes=len(payload), split=split)
            parts = unpack_parts(self.link.recv(CLIENT, FrameType.MERGED).payload)
            cl.receive_y(host, parts[0])
            for q, part in zip(done, parts[1:]):
                cl.receive_y(q, part)
            return
        cl.receive_y(host, self._plain(SERVER, y, f"online/{kind}"))
        for q, s in zip(done, shares):
            cl.receive_y(q, self._plain(SERVER, s, f"online/{PRI}"))

    def run_block(self, spec: BlockSpec, batch, priors, x0: dict, x1: dict,
                  pool_extra=None) -> LayerShareState:
        """Offline then online for one block over ``batch`` plus ``priors``."""
        bp = plan_block(spec, self.cfg.params, batch, priors, pool_extra)
        x1n = self.offline(bp, x1)
        x0n = self.online(bp, x0)
        self.reports.append(BlockReport(spec.name, bp, bp.fallback_online, bp.fallback_offline))
        return LayerShareState(x0n, x1n)
