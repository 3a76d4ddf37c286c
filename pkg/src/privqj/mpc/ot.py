"""1-out-of-2 oblivious transfer: a trusted-dealer functionality and a group-based instantiation."""
from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

import numpy as np

# 2048-bit safe prime (RFC 3526 group 14); 4 generates the quadratic residues
_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22"
    "514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6"
    "F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3BE39E772C180E8603"
    "9B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF", 16)
_Q = (_P - 1) // 2
_G = 4


@dataclass(frozen=True)
class OTInstance:
    m0: bytes
    m1: bytes
    b: int

    def __post_init__(self):
        if len(self.m0) != len(self.m1):
            raise ValueError("OT messages must have equal length")
        if self.b not in (0, 1):
            raise ValueError("choice must be a bit")


def _pad(point: int, tag: bytes, n: int) -> bytes:
    h = hashlib.shake_256(tag + point.to_bytes(256, "big"))
    return h.digest(n)


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


class BaseOT:
    """Two-message OT over a prime-order subgroup (sender and receiver state kept apart).

    Sender: a, A = g^a. Receiver: B = g^r (b=0) or A g^r (b=1), key H(A^r).
    Sender: k0 = H(B^a), k1 = H((B/A)^a), sends m_i xor k_i.
    """

    def __init__(self, rng=None):
        self._rand = rng if rng is not None else secrets.SystemRandom()

    def _exp(self) -> int:
        return self._rand.randrange(1, _Q)

    def sender_first(self):
        a = self._exp()
        return a, pow(_G, a, _P)

    def receiver_reply(self, A: int, b: int):
        r = self._exp()
        B = pow(_G, r, _P)
        if b:
            B = B * A % _P
        return r, B

    def sender_encrypt(self, a: int, A: int, B: int, m0: bytes, m1: bytes, tag: bytes = b"ot"):
        k0 = _pad(pow(B, a, _P), tag, len(m0))
        k1 = _pad(pow(B * pow(A, -1, _P) % _P, a, _P), tag, len(m1))
        return _xor(m0, k0), _xor(m1, k1)

    def receiver_decrypt(self, r: int, A: int, b: int, e0: bytes, e1: bytes, tag: bytes = b"ot"):
        k = _pad(pow(A, r, _P), tag, len(e0))
        return _xor(e1 if b else e0, k)


def ot_transfer(inst: OTInstance, mode: str = "dealer", rng=None) -> bytes:
    """Receiver's output m_b."""
    if mode == "dealer":
        return inst.m1 if inst.b else inst.m0
    if mode == "base":
        ot = BaseOT(rng)
        a, A = ot.sender_first()
        r, B = ot.receiver_reply(A, inst.b)
        e0, e1 = ot.sender_encrypt(a, A, B, inst.m0, inst.m1)
        return ot.receiver_decrypt(r, A, inst.b, e0, e1)
    raise ValueError(f"unknown OT mode {mode!r}")


def dealer_ot_bits(m0: np.ndarray, m1: np.ndarray, choice: np.ndarray) -> np.ndarray:
    """Vectorised dealer OT on packed bit words: returns m_choice bitwise."""
    m0 = np.asarray(m0, dtype=np.uint64)
    m1 = np.asarray(m1, dtype=np.uint64)
    choice = np.asarray(choice, dtype=np.uint64)
    if not (m0.shape == m1.shape == choice.shape):
        raise ValueError("OT batch shapes differ")
    return m0 ^ (choice & (m0 ^ m1))
