"""Slot-level packing and decoding driven by a ChainLayout.

Online: a host's extended vector (``cts_per_input * N`` slots) carries its own
``L`` values followed by prior fragments in the tail.

Offline (conv): ciphertext ``c`` carries im2col rows ``[cR, (c+1)R)`` of the
host's ``r0`` at slot offsets ``r*M`` and one prior row segment in its tail.
The server evaluates, for every output channel ``j``, the sum over ciphertexts
of ``plain(P_jc) * ct_c`` where ``P_jc`` repeats ``k_hat[j, row]`` over the slots
of each row; summing the ``R`` head segments of the result gives the host's
convolution, and the tail holds a partial convolution of the prior's chunk.
Wide rows (``M > N``) split each row over ``w`` ciphertexts and keep one
accumulation group per part.

Offline (dot): the host ciphertext holds ``R`` copies of ``r0`` and a chunk of
the prior's ``r0``; output ciphertext ``o`` is a single cMult with rows
``[oR, (o+1)R)`` of the weight matrix in the head and one prior row in the tail.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..he import _slot_groups
from ..planner import INQUEUE, PRIOR, ChainLayout, DotPlan, OfflinePlan, OnlinePlan


def _index(lay: ChainLayout, host, role=None):
    """Ranges of one host as (role, owner, ext_lo, ext_hi, elem_lo, rows)."""
    out = []
    for a in lay.for_host(host):
        if role is not None and a.role != role:
            continue
        base = a.ct * lay.N
        out.append((a.role, a.owner, base + a.slot_lo, base + a.slot_hi, a.elem_lo, a.rows))
    return out


class OnlinePacker:
    def __init__(self, plan: OnlinePlan, layout: ChainLayout):
        self.plan, self.layout = plan, layout
        self.ext_len = plan.ext_len
        self._idx = {h: _index(layout, h) for h in layout.cts_per_host}

    def hosts(self):
        return list(self._idx)

    def scatter(self, host, own, priors: dict, fill=0, dtype=np.int64) -> np.ndarray:
        """Extended vector of ``host``: own values, prior fragments, ``fill`` in idle slots."""
        ext = np.full(self.ext_len, fill, dtype=dtype)
        own = np.asarray(own).reshape(-1)
        for role, owner, lo, hi, elem, _ in self._idx[host]:
            if role == INQUEUE:
                ext[lo:hi] = own[elem:elem + hi - lo]
            elif role == PRIOR and owner in priors:
                ext[lo:hi] = np.asarray(priors[owner]).reshape(-1)[elem:elem + hi - lo]
        return ext

    def head(self, ext) -> np.ndarray:
        return np.asarray(ext)[:self.plan.length]

    def fragments(self, host, ext) -> list[tuple]:
        """(prior id, first element, values) for every prior range of ``host``."""
        ext = np.asarray(ext)
        return [(owner, elem, ext[lo:hi].copy())
                for role, owner, lo, hi, elem, _ in self._idx[host] if role == PRIOR]


class PriorAssembly:
    """Collects a prior's flat vector from fragments; every element exactly once."""

    def __init__(self, length: int):
        self.values = np.zeros(length, dtype=np.int64)
        self._seen = np.zeros(length, dtype=bool)
        self.fragments = 0

    def add(self, elem_lo: int, vals) -> None:
        hi = elem_lo + len(vals)
        if self._seen[elem_lo:hi].any():
            raise ValueError("fragment consumed twice")
        self.values[elem_lo:hi] = vals
        self._seen[elem_lo:hi] = True
        self.fragments += 1

    @property
    def filled(self) -> int:
        return int(self._seen.sum())

    @property
    def complete(self) -> bool:
        return bool(self._seen.all())


@dataclass
class TailInfo:
    prior: object
    col_lo: int
    col_hi: int
    rows: np.ndarray        # prior rows (conv: im2col rows; dot: output rows) served per tail


class ConvOfflinePacker:
    """Packing of im2col matrices (``K x M``) with prior row segments in the tails."""

    def __init__(self, plan: OfflinePlan, layout: ChainLayout):
        self.plan, self.layout, self.N = plan, layout, plan.N
        self.K, self.M = plan.rows, plan.row_len
        self._prior = {}
        for h in layout.cts_per_host:
            segs = [a for a in layout.for_host(h) if a.role == PRIOR]
            self._prior[h] = segs

    def n_cts(self) -> int:
        return self.plan.n

    def pack(self, host, own_hat: np.ndarray, prior_hats: dict) -> np.ndarray:
        pl, N, K, M = self.plan, self.N, self.K, self.M
        out = np.zeros((pl.n, N), dtype=np.int64)
        if pl.wide_row:
            w = pl.cts_per_row
            for u in range(w):
                lo, hi = u * N, min(M, (u + 1) * N)
                out[u::w, :hi - lo] = own_hat[:, lo:hi]
        else:
            R = pl.rows_per_ct
            padded = np.zeros((pl.n * R, M), dtype=np.int64)
            padded[:K] = own_hat
            out[:, :R * M] = padded.reshape(pl.n, R * M)
        for a in self._prior[host]:
            row, col = divmod(a.elem_lo, M)
            out[a.ct, a.slot_lo:a.slot_hi] = prior_hats[a.owner][row, col:col + a.width]
        return out

    def tail(self, host) -> TailInfo | None:
        segs = self._prior[host]
        if not segs:
            return None
        M = self.M
        col = segs[0].elem_lo % M
        return TailInfo(segs[0].owner, col, col + segs[0].width,
                        np.array([a.elem_lo // M for a in segs]))

    def groups(self, host) -> list[tuple[np.ndarray, list]]:
        """(ciphertext indices, slot groups) per accumulation group for ``lincomb_table``."""
        pl, N, K, M = self.plan, self.N, self.K, self.M
        segs = self._prior[host]
        if pl.wide_row:
            w = pl.cts_per_row
            out = []
            for u in range(w):
                cts = np.arange(K) * w + u
                width = min(M, (u + 1) * N) - u * N
                grp = [(np.arange(width), np.arange(K))]
                grp += _tail_groups([(a.ct // w, a) for a in segs if a.ct % w == u], K, M)
                out.append((cts, grp))
            return out
        R = pl.rows_per_ct
        rows = np.arange(pl.n)[:, None] * R + np.arange(R)[None, :]
        rows = np.where(rows < K, rows, -1)
        grp = [(np.arange(r * M, (r + 1) * M), rows[:, r]) for r in range(R)]
        grp += _tail_groups([(a.ct, a) for a in segs], pl.n, M)
        return [(np.arange(pl.n), grp)]

    def decode_head(self, outs: list[np.ndarray], p: int) -> np.ndarray:
        """(C_o, M) from the per-group output slot matrices (each C_o x N)."""
        pl, N, M = self.plan, self.N, self.M
        if pl.wide_row:
            parts = [o[:, :min(M, (u + 1) * N) - u * N] for u, o in enumerate(outs)]
            return np.concatenate(parts, axis=1)
        R = pl.rows_per_ct
        o = outs[0]
        return o[:, :R * M].reshape(o.shape[0], R, M).sum(axis=1) % p

    def decode_tail(self, outs: list[np.ndarray], host) -> np.ndarray:
        """(C_o, chunk width) partial convolution of the served prior chunk."""
        ti = self.tail(host)
        lo = self.plan.tail_lo()
        return outs[-1][:, lo:lo + ti.col_hi - ti.col_lo]


class DotOfflinePacker:
    """Packing for ``W @ r0`` with ``W`` of shape ``n_o x n_i``."""

    def __init__(self, plan: DotPlan, layout: ChainLayout):
        self.plan, self.layout, self.N = plan, layout, plan.N
        self._prior = {h: [a for a in layout.for_host(h) if a.role == PRIOR]
                       for h in layout.cts_per_host}

    def n_cts(self) -> int:
        return self.plan.cts_per_row

    def pack(self, host, own_r0: np.ndarray, prior_r0: dict) -> np.ndarray:
        pl, N, n_i = self.plan, self.N, self.plan.n_i
        out = np.zeros((pl.cts_per_row, N), dtype=np.int64)
        if pl.wide_row:
            for u in range(pl.cts_per_row):
                lo, hi = u * N, min(n_i, (u + 1) * N)
                out[u, :hi - lo] = own_r0[lo:hi]
        else:
            out[0, :pl.rows_per_ct * n_i] = np.tile(own_r0, pl.rows_per_ct)
        for a in self._prior[host]:
            out[a.ct, a.slot_lo:a.slot_hi] = prior_r0[a.owner][a.elem_lo:a.elem_lo + a.width]
        return out

    def tail(self, host) -> TailInfo | None:
        segs = self._prior[host]
        if not segs:
            return None
        a = segs[0]
        return TailInfo(a.owner, a.elem_lo, a.elem_lo + a.width, np.arange(*a.rows))

    def out_plain(self, host, Wm: np.ndarray) -> list[tuple[int, np.ndarray]]:
        """(input ciphertext index, plain multiplier) for every output ciphertext."""
        pl, N, n_i, n_o = self.plan, self.N, self.plan.n_i, self.plan.n_o
        tail = self.tail(host)
        tl = pl.tail_lo()
        res = []
        if pl.wide_row:
            w = pl.cts_per_row
            for o in range(n_o):
                for u in range(w):
                    v = np.zeros(N, dtype=np.int64)
                    lo, hi = u * N, min(n_i, (u + 1) * N)
                    v[:hi - lo] = Wm[o, lo:hi]
                    if u == w - 1 and tail is not None and o < len(tail.rows):
                        v[tl:tl + tail.col_hi - tail.col_lo] = Wm[tail.rows[o], tail.col_lo:tail.col_hi]
                    res.append((u, v))
            return res
        R = pl.rows_per_ct
        for o in range(pl.out_cts):
            v = np.zeros(N, dtype=np.int64)
            for r in range(R):
                row = o * R + r
                if row < n_o:
                    v[r * n_i:(r + 1) * n_i] = Wm[row]
            if tail is not None and o < len(tail.rows):
                v[tl:tl + tail.col_hi - tail.col_lo] = Wm[tail.rows[o], tail.col_lo:tail.col_hi]
            res.append((0, v))
        return res

    def decode_head(self, outs: np.ndarray, p: int) -> np.ndarray:
        """(n_o,) from the stacked output slot matrix (out_cts[*w] x N)."""
        pl, N, n_i = self.plan, self.N, self.plan.n_i
        if pl.wide_row:
            w = pl.cts_per_row
            tot = np.zeros(pl.n_o, dtype=np.int64)
            for u in range(w):
                width = min(n_i, (u + 1) * N) - u * N
                tot = (tot + outs[u::w, :width].sum(axis=1)) % p
            return tot
        R = pl.rows_per_ct
        seg = outs[:, :R * n_i].reshape(pl.out_cts, R, n_i).sum(axis=2) % p
        return seg.reshape(-1)[:pl.n_o]

    def decode_tail(self, outs: np.ndarray, host, p: int) -> np.ndarray:
        """Partial dot products for the served prior rows (one per output ciphertext)."""
        pl, tl = self.plan, self.plan.tail_lo()
        tail = self.tail(host)
        width = tail.col_hi - tail.col_lo
        last = outs[pl.cts_per_row - 1::pl.cts_per_row] if pl.wide_row else outs
        return last[:len(tail.rows), tl:tl + width].sum(axis=1) % p


def _tail_groups(items: list, n: int, M: int) -> list:
    """Slot groups of prior tail segments; ``items`` holds (ciphertext position, assignment)."""
    if not items:
        return []
    lo = min(a.slot_lo for _, a in items)
    hi = max(a.slot_hi for _, a in items)
    cm = np.full((n, hi - lo), -1, dtype=np.int64)
    for c, a in items:
        cm[c, a.slot_lo - lo:a.slot_hi - lo] = a.elem_lo // M
    return [(slots + lo, sig) for slots, sig in _slot_groups(cm, n, hi - lo)]
