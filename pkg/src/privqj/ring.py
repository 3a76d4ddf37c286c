"""Exact arithmetic over Z_p, tensor helpers, plaintext reference functions and im2col.

Tensors are plain ``int64`` numpy arrays holding residues in ``[0, p)``:
activations are ``(C, H, W)``, kernels ``(C_o, C_i, H_f, W_f)`` and matrices
``(rows, cols)``, all C-ordered (channel-major).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sympy import isprime

DEFAULT_N = 8192


class ShapeError(ValueError):
    pass


class OverflowRangeError(ValueError):
    pass


def ntt_friendly_prime(n_slots: int = DEFAULT_N, lower: int = 1 << 25) -> int:
    """Smallest prime >= ``lower`` congruent to 1 mod ``2 * n_slots``."""
    step = 2 * n_slots
    cand = -(-(lower - 1) // step) * step + 1
    while not isprime(cand):
        cand += step
    return cand


DEFAULT_P = ntt_friendly_prime()


@dataclass(frozen=True)
class Modulus:
    p: int

    def __post_init__(self):
        p = int(self.p)
        if p < 3 or p >= (1 << 62):
            raise ValueError(f"modulus must lie in [3, 2^62), got {p}")
        if not isprime(p):
            raise ValueError(f"modulus {p} is not prime")
        object.__setattr__(self, "p", p)

    @property
    def half(self) -> int:
        return self.p // 2

    @property
    def bits(self) -> int:
        return (self.p - 1).bit_length()

    def signed_lift(self, v):
        return signed_lift(v, self.p)

    def embed(self, v):
        """Inverse of ``signed_lift``."""
        return np.mod(np.asarray(v, dtype=np.int64), self.p)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, self.p, size=shape, dtype=np.int64)


def _as_p(p) -> int:
    return p.p if isinstance(p, Modulus) else int(p)


def check_residues(a: np.ndarray, p) -> np.ndarray:
    p = _as_p(p)
    a = np.asarray(a)
    if a.dtype != np.int64:
        a = a.astype(np.int64)
    if a.size and (a.min() < 0 or a.max() >= p):
        raise ValueError(f"residues must lie in [0, {p})")
    return a


# -- modular kernels ---------------------------------------------------------

def mulmod(a, b, p) -> np.ndarray:
    """Elementwise ``a * b mod p`` for residue arrays."""
    p = _as_p(p)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if p < (1 << 31):
        return (a * b) % p
    out = (a.astype(object) * b.astype(object)) % p
    return np.asarray(out, dtype=np.int64)


def addmod(a, b, p) -> np.ndarray:
    p = _as_p(p)
    s = np.add(a, b, dtype=np.int64)
    np.subtract(s, p, out=s, where=s >= p)
    return s


def submod(a, b, p) -> np.ndarray:
    p = _as_p(p)
    d = np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)
    d += p * (d < 0)
    return d


def _limb_plan(p: int, inner: int) -> tuple[int, int, bool]:
    """(limb bits, limb count, split right operand too) keeping sums below 2^53."""
    pbits = max(1, (p - 1).bit_length())
    ibits = max(1, inner).bit_length()
    room = 53 - ibits - pbits
    if room >= pbits:
        return pbits, 1, False
    if room >= 8:
        return room, -(-pbits // room), False
    b = max(1, (53 - ibits) // 2)
    return b, -(-pbits // b), True


def matmul_mod(a: np.ndarray, b: np.ndarray, p) -> np.ndarray:
    """Exact ``a @ b mod p`` via float64 BLAS on small limbs.

    The left operand (and the right one too, for long inner dimensions) is
    split into limbs small enough that every partial dot product is an integer
    below 2^53 and therefore exact in double precision. Leading batch axes
    broadcast as in ``np.matmul``.
    """
    p = _as_p(p)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(f"inner dimension mismatch {a.shape} @ {b.shape}")
    inner = a.shape[-1]
    if inner == 0:
        return np.zeros(np.matmul(np.zeros(a.shape), np.zeros(b.shape)).shape, dtype=np.int64)
    half = (p - 1) // 2
    if inner * half * half < (1 << 53):
        # centred residues: one exact float product suffices
        ac = np.where(a > half, a - p, a).astype(np.float64, order="C")
        bc = np.where(b > half, b - p, b).astype(np.float64, order="C")
        out = (ac @ bc).astype(np.int64)
        out %= p
        return out
    bits, n_limbs, split_b = _limb_plan(p, inner)
    mask = (1 << bits) - 1
    a_l = [((a >> (bits * i)) & mask).astype(np.float64, order="C") for i in range(n_limbs)]
    if not split_b:
        bf = b.astype(np.float64, order="C")
        if p < (1 << 31):
            # limb terms (< p) times 2^(bits*i) mod p (< p) stay below 2^62
            out = None
            for i, al in enumerate(a_l):
                part = (al @ bf).astype(np.int64)
                part %= p
                if i:
                    part *= pow(2, bits * i, p)
                    part += out
                    part %= p
                out = part
            return out
        out = None
        for i, al in enumerate(a_l):
            part = (al @ bf).astype(np.int64) % p
            if i:
                part = mulmod(part, pow(2, bits * i, p), p)
            out = part if out is None else addmod(out, part, p)
        return out
    b_l = [((b >> (bits * i)) & mask).astype(np.float64, order="C") for i in range(n_limbs)]
    out = None
    for shift in range(2 * n_limbs - 1):
        acc = None
        for i in range(max(0, shift - n_limbs + 1), min(shift, n_limbs - 1) + 1):
            part = (a_l[i] @ b_l[shift - i]).astype(np.int64) % p
            acc = part if acc is None else addmod(acc, part, p)
        term = mulmod(acc, pow(2, bits * shift, p), p) if shift else acc
        out = term if out is None else addmod(out, term, p)
    return out


# -- signed views and quantisation ------------------------------------------

def signed_lift(v, p):
    """Map residues in [0, p) to the centred range [-floor(p/2), floor(p/2)]."""
    p = _as_p(p)
    if np.isscalar(v) or isinstance(v, int):
        v = int(v)
        if not 0 <= v < p:
            raise ValueError(f"{v} is not a residue mod {p}")
        return v if v <= p // 2 else v - p
    v = np.asarray(v, dtype=np.int64)
    return np.where(v <= p // 2, v, v - p)


def quantize(x, scale: int, p) -> np.ndarray:
    p = _as_p(p)
    if scale <= 0:
        raise ValueError("scale must be a positive integer")
    q = np.rint(np.asarray(x, dtype=np.float64) * scale)
    if q.size and np.abs(q).max() > p // 2:
        raise OverflowRangeError(f"scaled values exceed the signed range of Z_{p}")
    return np.mod(q.astype(np.int64), p)


def dequantize(v, scale: int, p) -> np.ndarray:
    return signed_lift(np.asarray(v, dtype=np.int64), p).astype(np.float64) / scale


# -- shapes ------------------------------------------------------------------

@dataclass(frozen=True)
class ConvShape:
    C_i: int
    H_i: int
    W_i: int
    C_o: int
    H_f: int
    W_f: int
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        for name in ("C_i", "H_i", "W_i", "C_o", "H_f", "W_f", "stride"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be positive")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"unknown padding mode {self.padding!r}")
        if self.padding == "same" and (self.H_f % 2 == 0 or self.W_f % 2 == 0):
            raise ShapeError("same padding needs odd filter sizes")
        if self.padding == "valid" and (self.H_f > self.H_i or self.W_f > self.W_i):
            raise ShapeError("filter larger than input under valid padding")

    @classmethod
    def from_tuple(cls, H_i: int, C_i: int, f_h: int, C_o: int, stride: int = 1,
                   padding: str = "same") -> "ConvShape":
        """Build from the ``H_i, C_i, f_h, C_o`` ordering used by the b-size tables."""
        return cls(C_i, H_i, H_i, C_o, f_h, f_h, stride, padding)

    @property
    def out_hw(self) -> tuple[int, int]:
        return out_dims(self)

    @property
    def in_len(self) -> int:
        return self.C_i * self.H_i * self.W_i

    @property
    def rows(self) -> int:
        """Rows of the im2col matrix, H_f * W_f * C_i."""
        return self.H_f * self.W_f * self.C_i

    @property
    def out_cols(self) -> int:
        h, w = self.out_hw
        return h * w

    @property
    def out_len(self) -> int:
        return self.C_o * self.out_cols

    def label(self) -> str:
        return f"{self.H_i},{self.C_i},{self.H_f},{self.C_o}"


def out_dims(shape: ConvShape) -> tuple[int, int]:
    s = shape.stride
    if shape.padding == "same":
        return -(-shape.H_i // s), -(-shape.W_i // s)
    if shape.H_f > shape.H_i or shape.W_f > shape.W_i:
        raise ShapeError("filter larger than input under valid padding")
    return (shape.H_i - shape.H_f) // s + 1, (shape.W_i - shape.W_f) // s + 1


def _pads(shape: ConvShape) -> tuple[int, int]:
    if shape.padding == "valid":
        return 0, 0
    h_o, w_o = out_dims(shape)
    # total padding so that the last window fits, split as evenly as possible
    ph = max((h_o - 1) * shape.stride + shape.H_f - shape.H_i, 0)
    pw = max((w_o - 1) * shape.stride + shape.W_f - shape.W_i, 0)
    return ph // 2, pw // 2


def _check_input(x: np.ndarray, shape: ConvShape):
    if x.shape != (shape.C_i, shape.H_i, shape.W_i):
        raise ShapeError(f"input dims {x.shape} do not match {shape}")


def _check_kernel(k: np.ndarray, shape: ConvShape):
    if k.shape != (shape.C_o, shape.C_i, shape.H_f, shape.W_f):
        raise ShapeError(f"kernel dims {k.shape} do not match {shape}")


# -- im2col and reference linear functions ----------------------------------

def im2col(r0: np.ndarray, shape: ConvShape) -> np.ndarray:
    """Receptive-field matrix of shape ``(H_f*W_f*C_i, H_o*W_o)``.

    Row index is ``c * H_f * W_f + u * W_f + v`` (channel outermost), matching
    ``flatten_kernel``; column ``j`` is output position ``j`` in row-major order.
    """
    r0 = np.asarray(r0, dtype=np.int64)
    _check_input(r0, shape)
    h_o, w_o = out_dims(shape)
    top, left = _pads(shape)
    s = shape.stride
    need_h = (h_o - 1) * s + shape.H_f
    need_w = (w_o - 1) * s + shape.W_f
    padded = np.zeros((shape.C_i, max(need_h, shape.H_i + top), max(need_w, shape.W_i + left)),
                      dtype=np.int64)
    padded[:, top:top + shape.H_i, left:left + shape.W_i] = r0
    win = np.lib.stride_tricks.sliding_window_view(padded, (shape.H_f, shape.W_f), axis=(1, 2))
    win = win[:, : need_h - shape.H_f + 1: s, : need_w - shape.W_f + 1: s]
    # win: (C_i, H_o, W_o, H_f, W_f) -> (C_i, H_f, W_f, H_o, W_o)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(shape.rows, h_o * w_o)


def flatten_kernel(k: np.ndarray, shape: ConvShape) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    _check_kernel(k, shape)
    return k.reshape(shape.C_o, shape.rows)


def conv_ref(x: np.ndarray, k: np.ndarray, shape: ConvShape, p) -> np.ndarray:
    """Convolution over Z_p with zero padding, output ``(C_o, H_o, W_o)``."""
    x = check_residues(x, p)
    _check_input(x, shape)
    h_o, w_o = out_dims(shape)
    y = matmul_mod(flatten_kernel(k, shape), im2col(x, shape), p)
    return y.reshape(shape.C_o, h_o, w_o)


def dot_ref(w: np.ndarray, a: np.ndarray, p) -> np.ndarray:
    w = np.asarray(w, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    if w.ndim != 2 or w.shape[1] != a.shape[0]:
        raise ShapeError(f"cannot multiply {w.shape} by vector of length {a.shape[0]}")
    return matmul_mod(w, a[:, None], p)[:, 0]


def drelu_ref(x, p) -> np.ndarray:
    """1 where the signed value is strictly positive, else 0."""
    x = np.asarray(x, dtype=np.int64)
    return ((x > 0) & (x <= _as_p(p) // 2)).astype(np.int64)


def relu_ref(x, p) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return x * drelu_ref(x, p)


def sumpool_ref(x: np.ndarray, window: int, p) -> np.ndarray:
    """Window sums over non-overlapping ``window x window`` tiles."""
    x = np.asarray(x, dtype=np.int64)
    c, h, w = x.shape
    if window < 1 or h % window or w % window:
        raise ShapeError(f"pool window {window} does not tile {h}x{w}")
    t = x.reshape(c, h // window, window, w // window, window)
    return t.sum(axis=(2, 4)) % _as_p(p)


def batchnorm_ref(x: np.ndarray, scale, shift, p) -> np.ndarray:
    p = _as_p(p)
    x = np.asarray(x, dtype=np.int64)
    scale = np.asarray(scale, dtype=np.int64).reshape(-1, 1, 1)
    shift = np.asarray(shift, dtype=np.int64).reshape(-1, 1, 1)
    return addmod(mulmod(x, scale, p), np.broadcast_to(shift, x.shape), p)


# -- tensor literal fixtures --------------------------------------------------

def write_tensor(path, x: np.ndarray, p) -> None:
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 3:
        raise ShapeError("fixtures hold (C, H, W) tensors")
    c, h, w = x.shape
    body = " ".join(str(int(v)) for v in x.reshape(-1))
    Path(path).write_text(f"{c} {h} {w} {_as_p(p)}\n{body}\n")


def read_tensor(path) -> tuple[np.ndarray, int]:
    tokens = Path(path).read_text().split()
    if len(tokens) < 4:
        raise ValueError(f"{path}: missing 'C H W p' header")
    c, h, w, p = (int(t) for t in tokens[:4])
    vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if vals.size != c * h * w:
        raise ValueError(f"{path}: expected {c * h * w} residues, found {vals.size}")
    return check_residues(vals.reshape(c, h, w), p), p


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)
