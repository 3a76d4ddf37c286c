"""DReLU on additive shares via a GMW Boolean circuit over bit-sliced, packed words.

Each party runs the same circuit as a coroutine that only ever sees its own
shares: it yields the bytes it wants to send and is resumed with the peer's
bytes. With ``s = x0 + x1`` (integers, no reduction) and ``h = (p-1)/2``,

    drelu = [s >= 1] ^ [s >= h+1] ^ [s >= p+1] ^ [s >= p+h+1]

because the four thresholds are nested, so the XOR is the indicator of
``1 <= s <= h`` or ``p+1 <= s <= p+h``, i.e. ``1 <= (s mod p) <= h``.
Comparisons with a public constant ``c`` take the carry out of ``s + (2^(W+1) - c)``;
while the carry is still public no AND gate is spent.

The server's pre-generated mask ``h1`` is an input: at the end the server sends
``b1 ^ h1`` and the client sets ``h0 = b0 ^ b1 ^ h1``.
"""
from __future__ import annotations

from collections import deque
from functools import lru_cache
from typing import Generator

import numpy as np

from ..ring import _as_p, check_residues
from ..transport import CLIENT, SERVER, FrameType, Link
from .sharing import BoolSharePair
from .triples import TripleShares, TripleSource, n_words, pack_bits, unpack_bits

CATEGORY = "online/common_drelu"


def _width(p: int) -> int:
    return max(1, (p - 1).bit_length())


def _thresholds(p: int) -> tuple[int, ...]:
    h = (p - 1) // 2
    return (1, h + 1, p + 1, p + h + 1)


@lru_cache(maxsize=64)
def _cmp_schedule(c: int, nbits: int) -> tuple:
    """Per-bit action for the carry chain of ``s + (2^nbits - c)``.

    Actions: ('pub', v) carry becomes public v; ('copy',) carry = s_i;
    ('and',) carry &= s_i; ('or',) carry |= s_i.
    """
    k = (1 << nbits) - c
    if not 0 < k < (1 << nbits):
        raise ValueError("threshold out of range")
    acts, carry = [], 0          # carry: 0/1 public, None secret
    for i in range(nbits):
        ki = (k >> i) & 1
        if carry is not None:
            if ki == carry:
                acts.append(("pub", carry))
            else:
                acts.append(("copy",))
                carry = None
        else:
            acts.append(("or",) if ki else ("and",))
    return tuple(acts)


def drelu_and_count(p: int) -> int:
    """AND gates per element: the ripple adder plus the four comparisons."""
    p = _as_p(p)
    w = _width(p)
    return w + sum(a[0] in ("and", "or") for c in _thresholds(p) for a in _cmp_schedule(c, w + 1))


def drelu_depth(p: int) -> int:
    """Upper bound on AND layers (each costs one exchange); layers with only public carries are skipped."""
    w = _width(p)
    return w + w + 1


class TripleFeed:
    """Splits one triple stream so each party pulls only its own half."""

    def __init__(self, source: TripleSource):
        self.source = source
        self._q = (deque(), deque())

    def take(self, party: int, nw: int) -> TripleShares:
        mine, other = self._q[party], self._q[1 - party]
        if mine:
            s = mine.popleft()
            if len(s) != nw:
                raise RuntimeError("parties requested triples out of step")
            return s
        s0, s1 = self.source.take(nw)
        other.append(s1 if party == 0 else s0)
        return s0 if party == 0 else s1


class _Party:
    """One party's local GMW state."""

    def __init__(self, idx: int, feed: TripleFeed, nw: int):
        self.idx, self.feed, self.nw = idx, feed, nw
        self.ones = np.full(nw, np.iinfo(np.uint64).max, dtype=np.uint64)

    def xor_pub(self, w, bit: int):
        if isinstance(w, int):
            return w ^ bit
        return w ^ self.ones if (bit and self.idx == 0) else w

    def xor(self, u, v):
        if isinstance(u, int) and isinstance(v, int):
            return u ^ v
        if isinstance(u, int):
            return self.xor_pub(v, u)
        if isinstance(v, int):
            return self.xor_pub(u, v)
        return u ^ v

    def ands(self, pairs) -> Generator:
        """Evaluate a batch of secret AND gates with one exchange."""
        k = len(pairs)
        if k == 0:
            return []
        t = self.feed.take(self.idx, k * self.nw)
        u = np.concatenate([a for a, _ in pairs])
        v = np.concatenate([b for _, b in pairs])
        d, e = u ^ t.a, v ^ t.b
        peer = yield np.concatenate([d, e]).astype("<u8").tobytes()
        pe = np.frombuffer(peer, dtype="<u8").astype(np.uint64)
        D = d ^ pe[:k * self.nw]
        E = e ^ pe[k * self.nw:]
        w = t.c ^ (D & t.b) ^ (E & t.a)
        if self.idx == 0:
            w ^= D & E
        return [w[i * self.nw:(i + 1) * self.nw] for i in range(k)]


def _party_circuit(idx: int, my_bits: list, p: int, feed: TripleFeed, nw: int,
                   h1_words: np.ndarray | None) -> Generator:
    P = _Party(idx, feed, nw)
    W = len(my_bits)
    zero = np.zeros(nw, dtype=np.uint64)
    a = my_bits if idx == 0 else [zero] * W      # client's value, shared trivially
    b = [zero] * W if idx == 0 else my_bits      # server's value
    # ripple-carry adder, s has W+1 bits
    s, c = [], 0
    for i in range(W):
        if isinstance(c, int):   # carry-in is public 0 only at bit 0
            s.append(a[i] ^ b[i])
            (c,) = yield from P.ands([(a[i], b[i])])
        else:
            s.append(a[i] ^ b[i] ^ c)
            (g,) = yield from P.ands([(a[i] ^ c, b[i] ^ c)])
            c = g ^ c
    s.append(c)
    # four threshold comparisons, carried in lock step
    scheds = [_cmp_schedule(t, W + 1) for t in _thresholds(p)]
    carries = [0] * len(scheds)
    for i in range(W + 1):
        gates, who = [], []
        for j, sch in enumerate(scheds):
            act = sch[i]
            if act[0] == "pub":
                carries[j] = act[1]
            elif act[0] == "copy":
                carries[j] = s[i]
            else:
                gates.append((s[i], carries[j]))
                who.append((j, act[0]))
        if gates:
            outs = yield from P.ands(gates)
            for (j, kind), g in zip(who, outs):
                carries[j] = g if kind == "and" else s[i] ^ carries[j] ^ g
    bit = 0
    for cj in carries:
        bit = P.xor(bit, cj)
    if isinstance(bit, int):
        bit = P.xor_pub(zero, bit)
    # align with the server's pre-generated h1
    if idx == 1:
        yield (bit ^ h1_words).astype("<u8").tobytes()
        return h1_words
    peer = yield None
    return bit ^ np.frombuffer(peer, dtype="<u8").astype(np.uint64)


def bit_slices(x: np.ndarray, W: int) -> list[np.ndarray]:
    x = x.reshape(-1)
    return [pack_bits((x >> i) & 1) for i in range(W)]


def drelu_protocol(x0, x1, p, h1=None, link: Link | None = None, source: TripleSource | None = None,
                   mode: str = "dealer", rng: np.random.Generator | None = None,
                   category: str = CATEGORY) -> BoolSharePair:
    """XOR shares (h0 at the client, h1 at the server) of drelu(x0 + x1 mod p)."""
    p = _as_p(p)
    x0 = check_residues(x0, p)
    x1 = check_residues(x1, p)
    if x0.shape != x1.shape:
        raise ValueError("share shapes differ")
    rng = rng if rng is not None else np.random.default_rng()
    shape, n = x0.shape, x0.size
    if h1 is None:
        h1 = rng.integers(0, 2, size=shape, dtype=np.uint8)
    h1 = np.asarray(h1, dtype=np.uint8)
    if h1.shape != shape or (h1 > 1).any():
        raise ValueError("h1 must be a bit tensor shaped like the shares")
    if n == 0:
        return BoolSharePair(np.zeros(shape, np.uint8), h1)
    source = source if source is not None else TripleSource(mode, rng)
    feed = TripleFeed(source)
    link = link if link is not None else Link.memory()
    W, nw = _width(p), n_words(n)
    g0 = _party_circuit(0, bit_slices(x0, W), p, feed, nw, None)
    g1 = _party_circuit(1, bit_slices(x1, W), p, feed, nw, pack_bits(h1))
    m0, m1 = next(g0), next(g1)
    res = [None, None]
    while res[0] is None or res[1] is None:
        if m0 is not None:
            link.send(CLIENT, FrameType.DRELU, m0, category)
        if m1 is not None:
            link.send(SERVER, FrameType.DRELU, m1, category)
        in1 = link.recv(SERVER, FrameType.DRELU).payload if m0 is not None else None
        in0 = link.recv(CLIENT, FrameType.DRELU).payload if m1 is not None else None
        m0, m1 = _step(g0, in0, res, 0), _step(g1, in1, res, 1)
    h0 = unpack_bits(res[0], n).reshape(shape)
    return BoolSharePair(h0, unpack_bits(res[1], n).reshape(shape))


def _step(gen, msg, res, i):
    if res[i] is not None:
        return None
    try:
        return gen.send(msg)
    except StopIteration as stop:
        res[i] = stop.value
        return None
