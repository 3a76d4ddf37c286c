"""Boolean AND triples on bit-packed words, from a dealer or from pairwise OTs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ot import dealer_ot_bits

WORD = 64


class TripleExhausted(RuntimeError):
    pass


def n_words(nbits: int) -> int:
    return -(-nbits // WORD)


def pack_bits(bits) -> np.ndarray:
    """Pack a flat 0/1 array into little-endian uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    nb = n_words(bits.size) * 8
    raw = np.packbits(bits, bitorder="little")
    if raw.size < nb:
        raw = np.concatenate([raw, np.zeros(nb - raw.size, dtype=np.uint8)])
    return raw.view("<u8").astype(np.uint64)


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(raw, bitorder="little")[:n]


@dataclass
class TripleShares:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __len__(self) -> int:
        return self.a.size


@dataclass
class TriplesBatch:
    count: int                # number of bit triples
    party0: TripleShares
    party1: TripleShares

    def bits(self, party: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.party0 if party == 0 else self.party1
        return tuple(unpack_bits(x, self.count) for x in (s.a, s.b, s.c))

    def holds(self) -> bool:
        s0, s1 = self.party0, self.party1
        return bool(np.all(((s0.a ^ s1.a) & (s0.b ^ s1.b)) == (s0.c ^ s1.c)))


def _rand_words(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)


def _gen_words(nw: int, mode: str, rng: np.random.Generator) -> tuple[TripleShares, TripleShares]:
    a0, b0, a1, b1 = (_rand_words(rng, nw) for _ in range(4))
    if mode == "dealer":
        c0 = _rand_words(rng, nw)
        c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0
    elif mode == "ot":
        # cross terms a0*b1 and a1*b0 via one OT each
        r1 = _rand_words(rng, nw)       # server's OT-1 mask
        r2 = _rand_words(rng, nw)       # client's OT-2 mask
        u = dealer_ot_bits(r1, r1 ^ b1, a0)    # client learns r1 ^ a0 b1
        v = dealer_ot_bits(r2, r2 ^ b0, a1)    # server learns r2 ^ a1 b0
        c0 = (a0 & b0) ^ u ^ r2
        c1 = (a1 & b1) ^ r1 ^ v
    else:
        raise ValueError(f"unknown triple mode {mode!r}")
    return TripleShares(a0, b0, c0), TripleShares(a1, b1, c1)


def gen_triples(count: int, mode: str = "dealer", rng: np.random.Generator | None = None) -> TriplesBatch:
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = rng if rng is not None else np.random.default_rng()
    s0, s1 = _gen_words(n_words(count), mode, rng)
    return TriplesBatch(count, s0, s1)


class TripleSource:
    """Hands out triple words to the two parties on demand.

    ``limit`` (in words) models a finite pre-generated pool; ``debug`` re-checks
    the AND relation of everything handed out.
    """

    def __init__(self, mode: str = "dealer", rng: np.random.Generator | None = None,
                 limit: int | None = None, debug: bool = False):
        self.mode = mode
        self.rng = rng if rng is not None else np.random.default_rng()
        self.limit = limit
        self.debug = debug
        self.used_words = 0

    def take(self, nw: int) -> tuple[TripleShares, TripleShares]:
        if self.limit is not None and self.used_words + nw > self.limit:
            raise TripleExhausted(f"need {nw} triple words, {self.limit - self.used_words} left")
        self.used_words += nw
        s0, s1 = _gen_words(nw, self.mode, self.rng)
        if self.debug:
            assert np.all(((s0.a ^ s1.a) & (s0.b ^ s1.b)) == (s0.c ^ s1.c)), "bad triple"
        return s0, s1
