"""Fused elementwise kernels; numba when available, numpy otherwise."""
from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def _fold_numpy(acc, off, out, lo, p):
    """out[:, lo:lo+G*S] = (acc regrouped to rows + off) mod p, for exact float acc."""
    G, R, S = acc.shape
    x = acc.transpose(1, 0, 2).reshape(R, G * S)
    x = x + off[:, lo:lo + G * S]
    q = np.floor(x * (1.0 / p))
    q *= p
    x -= q
    r = x.astype(np.int64)
    np.add(r, p, out=r, where=r < 0)
    np.subtract(r, p, out=r, where=r >= p)
    out[:, lo:lo + G * S] = r


if njit is not None:
    @njit(cache=True, nogil=True)
    def _fold_numba(acc, off, out, lo, p):  # pragma: no cover - compiled
        G, R, S = acc.shape
        inv = 1.0 / p
        for j in range(R):
            for g in range(G):
                base = lo + g * S
                for m in range(S):
                    x = acc[g, j, m] + off[j, base + m]
                    q = np.floor(x * inv)
                    r = np.int64(x - q * p)
                    if r < 0:
                        r += p
                    elif r >= p:
                        r -= p
                    out[j, base + m] = r
else:
    _fold_numba = None


def fold_reduce(acc: np.ndarray, off: np.ndarray, out: np.ndarray, lo: int, p: int) -> None:
    """Write ``(acc[g, j, m] + off[j, lo + g*S + m]) mod p`` into ``out`` (same index).

    ``acc`` holds integer-valued floats with ``|acc| + 2p < 2^53`` so every step
    is exact.
    """
    if _fold_numba is not None:
        _fold_numba(np.ascontiguousarray(acc), off, out, int(lo), int(p))
    else:
        _fold_numpy(acc, off, out, lo, p)
