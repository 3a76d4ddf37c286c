"""Additive shares over Z_p and the arithmetic form of XOR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ring import _as_p, addmod, check_residues, submod


@dataclass
class ArithSharePair:
    x0: np.ndarray   # client
    x1: np.ndarray   # server


@dataclass
class BoolSharePair:
    h0: np.ndarray   # client
    h1: np.ndarray   # server

    def value(self) -> np.ndarray:
        return self.h0 ^ self.h1


def share(x, p, rng: np.random.Generator) -> ArithSharePair:
    p = _as_p(p)
    x = check_residues(x, p)
    x0 = rng.integers(0, p, size=x.shape, dtype=np.int64)
    return ArithSharePair(x0, submod(x, x0, p))


def reconstruct(pair: ArithSharePair, p) -> np.ndarray:
    if np.shape(pair.x0) != np.shape(pair.x1):
        raise ValueError("share shapes differ")
    return addmod(pair.x0, pair.x1, _as_p(p))


def xor_arith_form(h0, h1, p=None) -> np.ndarray:
    """h0 + h1 - 2 h0 h1, i.e. h0 XOR h1 computed with ring operations."""
    h0 = np.asarray(h0, dtype=np.int64)
    h1 = np.asarray(h1, dtype=np.int64)
    if ((h0 != 0) & (h0 != 1)).any() or ((h1 != 0) & (h1 != 1)).any():
        raise ValueError("inputs must be bits")
    v = h0 + h1 - 2 * h0 * h1
    return v if p is None else np.mod(v, _as_p(p))
