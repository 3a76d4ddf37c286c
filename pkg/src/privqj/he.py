"""Exact reference backend for packed (SIMD) homomorphic encryption with operation metering.

Slots are held in the clear behind an opaque payload: the backend is for
correctness and cost accounting, not secrecy. Only the operations the protocol
needs exist (encrypt, decrypt, slotwise add, plaintext-vector multiply); there is
no ciphertext-ciphertext product and no rotation.
"""
from __future__ import annotations

import itertools
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._kernels import fold_reduce
from .ring import _as_p, addmod, check_residues, matmul_mod, mulmod

OPS = ("enc", "dec", "add", "cmult", "rot", "extr")
PHASES = ("offline", "online")
KINDS = ("inqueue", "prior", "common_drelu")


class KeyMismatchError(PermissionError):
    """Ciphertext used with a key it was not produced under."""


def _cat(category) -> tuple[str, str]:
    if isinstance(category, str):
        phase, kind = category.split("/")
    else:
        phase, kind = category
    if phase not in PHASES or kind not in KINDS:
        raise ValueError(f"unknown category {category!r}")
    return phase, kind


class CostMeter:
    """Thread-safe counters of HE operations split by (phase, kind)."""

    def __init__(self):
        self._c: Counter = Counter()
        self._lock = threading.Lock()

    def add(self, op: str, category, n: int = 1) -> None:
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        if n < 0:
            raise ValueError("counters only grow")
        key = (op,) + _cat(category)
        with self._lock:
            self._c[key] += n

    def get(self, op: str, phase: str | None = None, kind: str | None = None) -> int:
        with self._lock:
            return sum(v for (o, ph, k), v in self._c.items()
                       if o == op and phase in (None, ph) and kind in (None, k))

    def by_kind(self, kind: str, phase: str | None = None) -> dict:
        return {op: self.get(op, phase, kind) for op in OPS}

    def snapshot(self) -> dict:
        with self._lock:
            return {"/".join(k): v for k, v in sorted(self._c.items())}

    def merge(self, other: "CostMeter") -> None:
        with other._lock:
            items = list(other._c.items())
        with self._lock:
            for k, v in items:
                self._c[k] += v

    def totals(self) -> dict:
        return {op: self.get(op) for op in OPS}


@dataclass(frozen=True)
class KeyHandle:
    id: int
    owner: str


@dataclass(frozen=True, eq=False)
class CipherVec:
    key: KeyHandle
    payload: np.ndarray = field(repr=False)
    tag: int

    @property
    def N(self) -> int:
        return self.payload.shape[0]


def ct_wire_size(N: int, override: int | None = None) -> int:
    """Modeled size in bytes of one serialized ciphertext."""
    if override is not None:
        if override <= 0:
            raise ValueError("wire size must be positive")
        return int(override)
    return 16 * N


_CT_HDR = struct.Struct("<QQQI")  # key id, tag, owner flag, N


class ReferenceHE:
    def __init__(self, N: int, p, meter: CostMeter | None = None, wire_size: int | None = None):
        self.N = N
        self.p = _as_p(p)
        self.meter = meter if meter is not None else CostMeter()
        self.wire_size = ct_wire_size(N, wire_size)
        self._ids = itertools.count(1)
        self._tags = itertools.count(1)
        self._lock = threading.Lock()

    def _tag(self) -> int:
        with self._lock:
            return next(self._tags)

    def keygen(self, owner: str) -> KeyHandle:
        if owner not in ("client", "server"):
            raise ValueError("owner must be 'client' or 'server'")
        with self._lock:
            return KeyHandle(next(self._ids), owner)

    def _plain(self, v) -> np.ndarray:
        v = check_residues(v, self.p)
        if v.shape != (self.N,):
            raise ValueError(f"plain vector must have exactly {self.N} slots, got {v.shape}")
        return v

    def _ct(self, payload, key) -> CipherVec:
        payload.setflags(write=False)
        return CipherVec(key, payload, self._tag())

    def encrypt(self, v, key: KeyHandle, category) -> CipherVec:
        out = self._ct(self._plain(v).copy(), key)
        self.meter.add("enc", category)
        return out

    def decrypt(self, c: CipherVec, key: KeyHandle, category) -> np.ndarray:
        if c.key != key:
            raise KeyMismatchError(f"ciphertext under key {c.key.id} cannot be decrypted with key {key.id}")
        self.meter.add("dec", category)
        return c.payload.copy()

    def add(self, c: CipherVec, rhs, category) -> CipherVec:
        if isinstance(rhs, CipherVec):
            if rhs.key != c.key:
                raise KeyMismatchError("cannot add ciphertexts under different keys")
            other = rhs.payload
        else:
            other = self._plain(rhs)
        self.meter.add("add", category)
        return self._ct(addmod(c.payload, other, self.p), c.key)

    def cmult(self, plain, c: CipherVec, category) -> CipherVec:
        if isinstance(plain, CipherVec):
            raise TypeError("ciphertext-ciphertext multiplication is not supported")
        self.meter.add("cmult", category)
        return self._ct(mulmod(self._plain(plain), c.payload, self.p), c.key)

    def lincomb_table(self, cts: list[CipherVec], table, colmap: np.ndarray | None,
                      category, offset: np.ndarray | None = None,
                      groups: list | None = None) -> list[CipherVec]:
        """For each row j of ``table``: sum over c of plain(table[j, colmap[c]]) * cts[c].

        Equivalent to ``len(cts)`` cMult and ``len(cts) - 1`` Add per output row
        (and metered so); ``colmap[c, s] = -1`` selects a zero multiplier. An
        ``offset`` (rows x N plain matrix) is added afterwards, one Add per row.

        ``groups`` may replace ``colmap``: a list of ``(slots, sig)`` pairs where
        every slot in ``slots`` uses column ``sig[c]`` for ciphertext ``c``;
        slots not listed get multiplier zero. ``table`` may be a ``PlainTable``
        to reuse validated coefficients across calls.
        """
        n = len(cts)
        if n == 0:
            raise ValueError("need at least one ciphertext")
        key = cts[0].key
        if any(c.key != key for c in cts):
            raise KeyMismatchError("cannot combine ciphertexts under different keys")
        pt = table if isinstance(table, PlainTable) else PlainTable(table, self.p)
        if pt.p != self.p:
            raise ValueError("table was built for a different modulus")
        rows = pt.rows
        if groups is None:
            groups = _slot_groups(np.asarray(colmap, dtype=np.int64), n, self.N)
        has_offset = offset is not None
        if has_offset:
            offset = check_residues(offset, self.p)
            if offset.shape != (rows, self.N):
                raise ValueError(f"offset must have shape {(rows, self.N)}")
        else:
            offset = np.zeros((rows, self.N), dtype=np.int64)
        out = np.empty((rows, self.N), dtype=np.int64)
        covered = np.zeros(self.N, dtype=bool)
        X = np.stack([c.payload for c in cts])
        # groups with the same slot count are evaluated as one batched product
        by_size: dict = {}
        for slots, sig in groups:
            slots = np.asarray(slots, dtype=np.int64)
            sig = np.where(np.asarray(sig) < 0, pt.cols, sig)
            if slots.size and (sig != pt.cols).any():
                by_size.setdefault(slots.size, []).append((slots, sig))
        for size, items in by_size.items():
            slot_idx = np.stack([s_ for s_, _ in items])                       # (G, size)
            sigs = np.stack([g for _, g in items])                              # (G, n)
            runs = bool((slot_idx[:, -1] - slot_idx[:, 0] == size - 1).all())
            if runs:
                data = np.stack([X[:, s_[0]:s_[0] + size] for s_ in slot_idx])
            else:
                data = X[np.arange(n)[None, :, None], slot_idx[:, None, :]]
            tiled = runs and bool((np.diff(slot_idx[:, 0]) == size).all())
            flat = slot_idx.reshape(-1)
            sl = slice(int(flat[0]), int(flat[0]) + flat.size) if tiled else flat
            covered[sl] = True
            if pt.exact_float(n):
                # one exact float product on centred residues, offset folded in
                acc = np.matmul(pt.coeff(sigs), pt.centre(data))               # (G, rows, size)
                if tiled:
                    fold_reduce(acc, offset, out, sl.start, self.p)
                    continue
                acc = acc.transpose(1, 0, 2).reshape(rows, -1)
                acc += offset[:, sl]
                out[:, sl] = pt.reduce(acc)
            else:
                coeff = pt.ext[:, sigs].transpose(1, 0, 2)
                res = matmul_mod(coeff, data, self.p).transpose(1, 0, 2).reshape(rows, -1)
                out[:, sl] = addmod(offset[:, sl], res, self.p)
        rest = ~covered
        if rest.any():
            out[:, rest] = offset[:, rest]
        if has_offset:
            self.meter.add("add", category, rows)
        self.meter.add("cmult", category, rows * n)
        self.meter.add("add", category, rows * (n - 1))
        return [self._ct(out[j], key) for j in range(rows)]

    def _wire_dtype(self) -> str:
        return "<u4" if self.p < (1 << 32) else "<u8"

    def serialize_many(self, cts: list[CipherVec]) -> bytes:
        if not cts:
            return struct.pack("<I", 0)
        head = struct.pack("<I", len(cts)) + b"".join(
            _CT_HDR.pack(c.key.id, c.tag, 0 if c.key.owner == "client" else 1, c.N) for c in cts)
        body = np.empty((len(cts), self.N), dtype=self._wire_dtype())
        for i, c in enumerate(cts):
            body[i] = c.payload
        return head + body.tobytes()

    def deserialize_many(self, data: bytes) -> list[CipherVec]:
        (k,) = struct.unpack_from("<I", data)
        pos = 4
        hdrs = []
        for _ in range(k):
            hdrs.append(_CT_HDR.unpack_from(data, pos))
            pos += _CT_HDR.size
        dt = np.dtype(self._wire_dtype())
        if len(data) - pos != dt.itemsize * self.N * k or any(h[3] != self.N for h in hdrs):
            raise ValueError("malformed ciphertext batch")
        block = np.frombuffer(data, dtype=dt, offset=pos).astype(np.int64).reshape(k, self.N)
        block.setflags(write=False)
        return [CipherVec(KeyHandle(kid, "client" if own == 0 else "server"), block[i], tag)
                for i, (kid, tag, own, _) in enumerate(hdrs)]

    def decrypt_many(self, cts: list[CipherVec], key: KeyHandle, category) -> np.ndarray:
        """Stacked plaintexts of several ciphertexts (one Dec each)."""
        if any(c.key != key for c in cts):
            raise KeyMismatchError("ciphertext key does not match the decryption key")
        self.meter.add("dec", category, len(cts))
        return np.stack([c.payload for c in cts]) if cts else np.zeros((0, self.N), np.int64)

    # wire helpers: the payload is what a real adapter would ship; the modeled
    # size (``wire_size``) is what the transcript charges
    def serialize(self, c: CipherVec) -> bytes:
        owner = 0 if c.key.owner == "client" else 1
        return _CT_HDR.pack(c.key.id, c.tag, owner, c.N) + c.payload.astype("<u8").tobytes()

    def deserialize(self, data: bytes) -> CipherVec:
        kid, tag, owner, N = _CT_HDR.unpack_from(data)
        if N != self.N or len(data) != _CT_HDR.size + 8 * N:
            raise ValueError("malformed ciphertext payload")
        payload = np.frombuffer(data, dtype="<u8", offset=_CT_HDR.size).astype(np.int64)
        payload.setflags(write=False)
        return CipherVec(KeyHandle(kid, "client" if owner == 0 else "server"), payload, tag)


class PlainTable:
    """Validated plaintext coefficient table with cached per-signature gathers."""

    def __init__(self, table, p, cache_size: int = 4):
        self.p = _as_p(p)
        t = check_residues(table, self.p)
        if t.ndim != 2:
            raise ValueError("coefficient table must be a matrix")
        self.rows, self.cols = t.shape
        self.ext = np.concatenate([t, np.zeros((self.rows, 1), dtype=np.int64)], axis=1)
        self.half = (self.p - 1) // 2
        self._centred = None
        self._cache: dict = {}
        self._cache_size = cache_size

    def exact_float(self, inner: int) -> bool:
        # sums plus an offset, and the quotient products below, stay under 2^53
        return inner * self.half * self.half + 2 * self.p < (1 << 53)

    def reduce(self, x: np.ndarray) -> np.ndarray:
        """Residues of an integer-valued float array with |x| + 2p < 2^53 (in place)."""
        q = x * (1.0 / self.p)
        np.floor(q, out=q)
        q *= self.p
        x -= q                                  # exact; now within [-p, 2p)
        r = x.astype(np.int64)
        np.add(r, self.p, out=r, where=r < 0)
        np.subtract(r, self.p, out=r, where=r >= self.p)
        return r

    def centre(self, a: np.ndarray) -> np.ndarray:
        return np.where(a > self.half, a - self.p, a).astype(np.float64)

    def coeff(self, sigs: np.ndarray) -> np.ndarray:
        """Centred float multipliers of shape (groups, rows, len(sig))."""
        key = (sigs.shape, sigs.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            if self._centred is None:
                self._centred = self.centre(self.ext)
            hit = np.ascontiguousarray(self._centred[:, sigs].transpose(1, 0, 2))
            if len(self._cache) >= self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit


def _slot_groups(colmap: np.ndarray, n: int, N: int) -> list:
    """Group slots by their column signature (the column of ``colmap``)."""
    if colmap.shape != (n, N):
        raise ValueError(f"colmap must have shape {(n, N)}")
    # hash each signature, then confirm that every group really is uniform
    w = np.random.default_rng(12345).integers(1, 1 << 61, size=n, dtype=np.int64)
    keys = (colmap + 1).T.astype(np.uint64) @ w.astype(np.uint64)
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(inv.reshape(-1), kind="stable")
    bounds = np.searchsorted(inv.reshape(-1)[order], np.arange(len(first) + 1))
    sigs = colmap[:, first]
    groups = []
    for g in range(len(first)):
        slots = order[bounds[g]:bounds[g + 1]]
        if not (colmap[:, slots] == sigs[:, g:g + 1]).all():
            raise RuntimeError("slot signature hash collision")
        groups.append((slots, sigs[:, g]))
    return groups
