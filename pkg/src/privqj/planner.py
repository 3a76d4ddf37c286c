"""Slot-recycling geometry: idle slots, chained groups, per-prior batch sizes and layouts.

Two packings are planned independently. The online one concerns the vectors
``h1`` and ``x1 * (1 - 2 h1)`` that are packed flat (``C_i*H_i*W_i`` values over
``ceil(C_i*H_i*W_i / N)`` ciphertexts), whose last ciphertext has ``s_hat`` idle
slots. The offline one concerns the im2col matrix of ``r0``, packed row-wise
(rows of length ``H_o*W_o``) with ``s_tilde`` idle slots at the end of every
ciphertext. Prior inputs are written into those idle slots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .ring import DEFAULT_N, DEFAULT_P, ConvShape, ceil_div


class PlanError(ValueError):
    pass


class LayoutError(AssertionError):
    pass


@dataclass(frozen=True)
class SlotParams:
    N: int = DEFAULT_N
    p: int = DEFAULT_P

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise PlanError(f"N must be a power of two >= 2, got {self.N}")


# -- online (t-cipher) packing ----------------------------------------------

@dataclass(frozen=True)
class OnlinePlan:
    length: int          # C_i*H_i*W_i, or n_i for a dot product
    N: int
    cts_per_input: int
    s_hat: int
    g: int
    group_inqueue: int
    group_priors: int
    per_prior_batch: int | None
    shape: ConvShape | None = None

    @property
    def recycles(self) -> bool:
        return self.s_hat > 0

    @property
    def ext_len(self) -> int:
        return self.cts_per_input * self.N

    def inqueue_needed(self, n_priors: int) -> int:
        """Smallest batch whose tails hold ``n_priors`` complete priors."""
        if n_priors == 0:
            return 0
        if not self.recycles:
            raise PlanError("no idle slots: plan has no recycling")
        return ceil_div(n_priors * self.length, self.s_hat)


def plan_online_len(length: int, params: SlotParams, shape: ConvShape | None = None) -> OnlinePlan:
    if length < 1:
        raise PlanError("vector length must be positive")
    m = ceil_div(length, params.N)
    s_hat = m * params.N - length
    g = math.gcd(s_hat, length)
    if s_hat == 0:
        return OnlinePlan(length, params.N, m, 0, g, 1, 0, None, shape)
    return OnlinePlan(length, params.N, m, s_hat, g, length // g, s_hat // g,
                      ceil_div(length, s_hat), shape)


def plan_online(shape: ConvShape, params: SlotParams) -> OnlinePlan:
    return plan_online_len(shape.in_len, params, shape)


# -- offline (r0 im2col) packing ---------------------------------------------

@dataclass(frozen=True)
class OfflinePlan:
    """Row packing of a ``rows x row_len`` matrix into N-slot ciphertexts.

    Normal case (``row_len <= N``): ``rows_per_ct`` rows per ciphertext, ``n``
    ciphertexts, a tail of ``s_tilde`` idle slots in each. Wide case: each row
    spans ``cts_per_row`` ciphertexts and only the last one has a tail.
    """
    rows: int
    row_len: int
    N: int
    wide_row: bool
    rows_per_ct: int
    cts_per_row: int
    n: int
    s_tilde: int
    tails_per_input: int
    col_chunks: int | None
    inputs_per_chunk: int | None
    per_prior_batch: int | None
    shape: ConvShape | None = None

    @property
    def recycles(self) -> bool:
        return self.s_tilde > 0

    def chunk_cols(self, chunk: int) -> tuple[int, int]:
        lo = chunk * self.s_tilde
        return lo, min(self.row_len, lo + self.s_tilde)

    def tail_lo(self) -> int:
        """First tail slot inside a ciphertext that carries a tail."""
        if self.wide_row:
            return self.row_len - (self.cts_per_row - 1) * self.N
        return self.rows_per_ct * self.row_len


def plan_offline_rows(rows: int, row_len: int, params: SlotParams,
                      shape: ConvShape | None = None) -> OfflinePlan:
    N = params.N
    if rows < 1 or row_len < 1:
        raise PlanError("matrix dimensions must be positive")
    if row_len > N:
        w = ceil_div(row_len, N)
        idle = w * N - row_len
        n, tails, rpc = rows * w, rows, 0
    else:
        w = 1
        rpc = N // row_len
        n = ceil_div(rows, rpc)
        idle = N % row_len
        tails = n
    if idle == 0:
        return OfflinePlan(rows, row_len, N, row_len > N, rpc, w, n, 0, tails,
                           None, None, None, shape)
    chunks = ceil_div(row_len, idle)
    per_chunk = ceil_div(rows, tails)
    return OfflinePlan(rows, row_len, N, row_len > N, rpc, w, n, idle, tails,
                       chunks, per_chunk, per_chunk * chunks, shape)


def plan_offline(shape: ConvShape, params: SlotParams) -> OfflinePlan:
    return plan_offline_rows(shape.rows, shape.out_cols, params, shape)


# -- dot products --------------------------------------------------------------

@dataclass(frozen=True)
class DotPlan:
    """Offline packing for ``w @ r0`` with ``w`` of shape ``n_o x n_i``.

    The client packs ``rows_per_ct`` copies of ``r0`` per ciphertext (or spreads
    one copy over ``cts_per_row`` ciphertexts when ``n_i > N``); the server
    produces ``out_cts`` product ciphertexts, each covering ``rows_per_ct``
    output rows in its head and one prior output row in its tail.
    """
    n_i: int
    n_o: int
    N: int
    wide_row: bool
    rows_per_ct: int
    cts_per_row: int
    idle: int
    out_cts: int
    col_chunks: int | None
    inputs_per_chunk: int | None
    per_prior_batch: int | None

    @property
    def recycles(self) -> bool:
        return self.idle > 0

    def chunk_cols(self, chunk: int) -> tuple[int, int]:
        lo = chunk * self.idle
        return lo, min(self.n_i, lo + self.idle)

    def tail_lo(self) -> int:
        if self.wide_row:
            return self.n_i - (self.cts_per_row - 1) * self.N
        return self.rows_per_ct * self.n_i


def plan_dot(n_i: int, n_o: int, params: SlotParams) -> DotPlan:
    N = params.N
    if n_i < 1 or n_o < 1:
        raise PlanError("dot dimensions must be positive")
    if n_i > N:
        w = ceil_div(n_i, N)
        rpc, idle, out_cts = 0, w * N - n_i, n_o
    else:
        w = 1
        rpc = min(N // n_i, n_o)
        idle = N - rpc * n_i
        out_cts = ceil_div(n_o, rpc)
    if idle == 0:
        return DotPlan(n_i, n_o, N, n_i > N, rpc, w, 0, out_cts, None, None, None)
    chunks = ceil_div(n_i, idle)
    per_chunk = ceil_div(n_o, out_cts)
    return DotPlan(n_i, n_o, N, n_i > N, rpc, w, idle, out_cts, chunks, per_chunk,
                   per_chunk * chunks)


# -- chain layouts -------------------------------------------------------------

INQUEUE, PRIOR, IDLE = "inqueue", "prior", "idle"


@dataclass(frozen=True)
class SlotAssignment:
    role: str            # inqueue | prior | idle
    owner: object        # id of the input whose data occupies the range (None if idle)
    host: object         # id of the in-queue input whose ciphertexts host the range
    ct: int              # ciphertext index within the host's packing
    slot_lo: int
    slot_hi: int
    elem_lo: int = 0     # first flat element of `owner` stored here
    rows: tuple | None = None   # dot tails: output rows of the prior this range serves

    @property
    def width(self) -> int:
        return self.slot_hi - self.slot_lo


@dataclass
class ChainLayout:
    kind: str                       # online | offline | dot
    N: int
    assignments: list[SlotAssignment] = field(default_factory=list)
    cts_per_host: dict = field(default_factory=dict)
    owner_len: dict = field(default_factory=dict)   # element count each owner must cover
    pending: dict = field(default_factory=dict)     # prior id -> elements not yet placed

    def for_host(self, host) -> list[SlotAssignment]:
        return [a for a in self.assignments if a.host == host]

    def prior_pieces(self, prior) -> list[SlotAssignment]:
        return [a for a in self.assignments if a.role == PRIOR and a.owner == prior]

    def hosts_of(self, prior) -> list:
        seen = []
        for a in self.prior_pieces(prior):
            if a.host not in seen:
                seen.append(a.host)
        return seen

    def complete(self, prior) -> bool:
        return self.pending.get(prior, 0) == 0


def build_online_layout(plan: OnlinePlan, batch_ids: Sequence, prior_ids: Sequence = (),
                        allow_partial: bool = False) -> ChainLayout:
    """Chained batching of the flat online vectors.

    Prior elements are streamed in ascending order, prior after prior, into the
    tails of successive in-queue inputs.
    """
    if prior_ids and not plan.recycles:
        raise PlanError("no recycling: plan has no idle slots")
    need = plan.inqueue_needed(len(prior_ids)) if prior_ids else 0
    if len(batch_ids) < need and not allow_partial:
        raise PlanError(f"batch of {len(batch_ids)} cannot host {len(prior_ids)} priors "
                        f"({need} in-queue inputs needed)")
    N, L, m = plan.N, plan.length, plan.cts_per_input
    lay = ChainLayout("online", N, cts_per_host={b: m for b in batch_ids})
    stream = [(pid, 0) for pid in prior_ids]
    for b in batch_ids:
        lay.owner_len[b] = L
    for pid in prior_ids:
        lay.owner_len[pid] = L
    cursor = 0  # index into `stream`
    done_in_prior = 0
    for b in batch_ids:
        for c in range(m):
            lo = c * N
            hi = min(L, lo + N)
            if hi > lo:
                lay.assignments.append(SlotAssignment(INQUEUE, b, b, c, 0, hi - lo, lo))
        slot = L - (m - 1) * N
        while slot < N and cursor < len(stream):
            pid = stream[cursor][0]
            take = min(N - slot, L - done_in_prior)
            lay.assignments.append(SlotAssignment(PRIOR, pid, b, m - 1, slot, slot + take,
                                                  done_in_prior))
            slot += take
            done_in_prior += take
            if done_in_prior == L:
                cursor += 1
                done_in_prior = 0
        if slot < N:
            lay.assignments.append(SlotAssignment(IDLE, None, b, m - 1, slot, N))
    for i, (pid, _) in enumerate(stream):
        if i < cursor:
            lay.pending[pid] = 0
        elif i == cursor:
            lay.pending[pid] = L - done_in_prior
        else:
            lay.pending[pid] = L
    return lay


def build_offline_layout(plan: OfflinePlan | DotPlan, batch_ids: Sequence,
                         prior_ids: Sequence = (), allow_partial: bool = False) -> ChainLayout:
    """Assign prior segments to the ciphertext tails of in-queue inputs.

    Every in-queue input serves exactly one (prior, column chunk) pair, because
    the server accumulates all of an input's tails into one result. Hosts are
    consumed in order, ``per_prior_batch`` per prior, chunk-major.

    Conv plans: tail ``t`` holds row ``part*tails + t`` of the prior's im2col
    matrix, restricted to the chunk's columns; element indices address the
    flattened ``rows x row_len`` matrix.

    Dot plans: one tail per host holds ``r0[chunk]`` of the prior and serves
    output rows ``[part*out_cts, (part+1)*out_cts)`` (recorded in ``rows``).
    """
    if prior_ids and not plan.recycles:
        raise PlanError("no recycling: plan has no idle slots")
    is_dot = isinstance(plan, DotPlan)
    if is_dot:
        rows, row_len, tails = plan.n_o, plan.n_i, plan.out_cts
    else:
        rows, row_len, tails = plan.rows, plan.row_len, plan.tails_per_input
    per_prior = plan.per_prior_batch or 0
    if len(batch_ids) < per_prior * len(prior_ids) and not allow_partial:
        raise PlanError(f"batch of {len(batch_ids)} cannot host {len(prior_ids)} priors "
                        f"({per_prior * len(prior_ids)} in-queue inputs needed)")
    N = plan.N
    lay = ChainLayout("dot" if is_dot else "offline", N)
    for pid in prior_ids:
        lay.owner_len[pid] = rows * row_len
        lay.pending[pid] = rows * row_len
    tail_lo = plan.tail_lo()
    for idx, b in enumerate(batch_ids):
        lay.owner_len[b] = plan.n_i if is_dot else rows * row_len
        _head_assignments(plan, lay, b)
        p_idx, within = divmod(idx, per_prior) if per_prior else (len(prior_ids), 0)
        serving = prior_ids[p_idx] if p_idx < len(prior_ids) else None
        if serving is not None:
            chunk, part = divmod(within, plan.inputs_per_chunk)
            c_lo, c_hi = plan.chunk_cols(chunk)
            width = c_hi - c_lo
        if is_dot:
            ct = plan.cts_per_row - 1
            r_lo = None if serving is None else part * tails
            if serving is not None and r_lo < rows:
                r_hi = min(rows, r_lo + tails)
                lay.assignments.append(SlotAssignment(PRIOR, serving, b, ct, tail_lo,
                                                      tail_lo + width, c_lo, rows=(r_lo, r_hi)))
                lay.pending[serving] -= width * (r_hi - r_lo)
                if tail_lo + width < N:
                    lay.assignments.append(SlotAssignment(IDLE, None, b, ct, tail_lo + width, N))
            elif tail_lo < N:
                lay.assignments.append(SlotAssignment(IDLE, None, b, ct, tail_lo, N))
            continue
        for t in range(tails):
            ct = _tail_ct(plan, t)
            row = None if serving is None else part * tails + t
            if serving is not None and row < rows:
                lay.assignments.append(SlotAssignment(PRIOR, serving, b, ct, tail_lo,
                                                      tail_lo + width, row * row_len + c_lo))
                lay.pending[serving] -= width
                if tail_lo + width < N:
                    lay.assignments.append(SlotAssignment(IDLE, None, b, ct, tail_lo + width, N))
            elif tail_lo < N:
                lay.assignments.append(SlotAssignment(IDLE, None, b, ct, tail_lo, N))
    return lay


def _tail_ct(plan: OfflinePlan, t: int) -> int:
    if plan.wide_row:
        return t * plan.cts_per_row + plan.cts_per_row - 1
    return t


def _head_assignments(plan, lay: ChainLayout, b) -> None:
    N = plan.N
    if isinstance(plan, DotPlan):
        w = plan.cts_per_row
        lay.cts_per_host[b] = w
        if plan.wide_row:
            for c in range(w):
                lo = c * N
                hi = min(plan.n_i, lo + N)
                lay.assignments.append(SlotAssignment(INQUEUE, b, b, c, 0, hi - lo, lo))
        else:
            for r in range(plan.rows_per_ct):
                lay.assignments.append(SlotAssignment(INQUEUE, b, b, 0, r * plan.n_i,
                                                      (r + 1) * plan.n_i, 0))
        return
    rows, M = plan.rows, plan.row_len
    lay.cts_per_host[b] = plan.n
    if plan.wide_row:
        w = plan.cts_per_row
        for i in range(rows):
            for u in range(w):
                lo = u * N
                hi = min(M, lo + N)
                lay.assignments.append(SlotAssignment(INQUEUE, b, b, i * w + u, 0, hi - lo,
                                                      i * M + lo))
        return
    rpc = plan.rows_per_ct
    for c in range(plan.n):
        r_lo, r_hi = c * rpc, min(rows, (c + 1) * rpc)
        used = (r_hi - r_lo) * M
        lay.assignments.append(SlotAssignment(INQUEUE, b, b, c, 0, used, r_lo * M))
        if used < rpc * M:
            lay.assignments.append(SlotAssignment(IDLE, None, b, c, used, rpc * M))


def build_chain_layout(plan, batch_ids: Sequence, prior_ids: Sequence = (),
                       allow_partial: bool = False) -> ChainLayout:
    if not plan.recycles:
        raise PlanError("no recycling: plan has no idle slots")
    if isinstance(plan, OnlinePlan):
        return build_online_layout(plan, batch_ids, prior_ids, allow_partial)
    return build_offline_layout(plan, batch_ids, prior_ids, allow_partial)


def check_layout(lay: ChainLayout) -> None:
    """Raise ``LayoutError`` unless slots form a partition and owners are covered exactly.

    Checks: every host ciphertext is covered by pairwise-disjoint ranges whose
    union is ``[0, N)``; every in-queue input's own ranges and every completed
    prior's ranges cover its elements exactly once. Dot layouts repeat ``r0``
    once per packed output row, so there each copy must be whole, and a
    prior's (row range x column chunk) rectangles must tile its product grid.
    """
    N = lay.N
    by_ct: dict = {}
    for a in lay.assignments:
        if not 0 <= a.slot_lo < a.slot_hi <= N:
            raise LayoutError(f"slot range out of bounds: {a}")
        if a.role not in (INQUEUE, PRIOR, IDLE):
            raise LayoutError(f"unknown role {a.role!r}")
        by_ct.setdefault((a.host, a.ct), []).append(a)
    for host, n_ct in lay.cts_per_host.items():
        for c in range(n_ct):
            if (host, c) not in by_ct:
                raise LayoutError(f"ciphertext {c} of {host!r} has no assignments")
    for key, parts in by_ct.items():
        if key[0] not in lay.cts_per_host or not 0 <= key[1] < lay.cts_per_host[key[0]]:
            raise LayoutError(f"assignment on unknown ciphertext {key}")
        pos = 0
        for a in sorted(parts, key=lambda a: a.slot_lo):
            if a.slot_lo != pos:
                kind = "overlap" if a.slot_lo < pos else "gap"
                raise LayoutError(f"{kind} in ciphertext {key} at slot {a.slot_lo}")
            pos = a.slot_hi
        if pos != N:
            raise LayoutError(f"ciphertext {key} covered only up to slot {pos}")
    spans: dict = {}
    for a in lay.assignments:
        if a.role != IDLE:
            spans.setdefault((a.role, a.owner), []).append(a)
    for (role, owner), parts in spans.items():
        total = lay.owner_len.get(owner)
        if total is None:
            raise LayoutError(f"unknown owner {owner!r}")
        if role == INQUEUE and owner not in lay.cts_per_host:
            raise LayoutError(f"in-queue data of {owner!r} hosted elsewhere")
        if role == PRIOR and lay.pending.get(owner, 0):
            continue  # partially placed priors are reported through `pending`
        if lay.kind == "dot":
            if role == INQUEUE:
                _check_dot_copies(owner, parts, total)
            else:
                _check_dot_prior(owner, parts, total)
            continue
        _check_cover(f"{role} {owner!r}", [(a.elem_lo, a.elem_lo + a.width) for a in parts], total)


def _check_cover(what: str, ranges, total: int) -> None:
    pos = 0
    for lo, hi in sorted(ranges):
        if lo != pos:
            raise LayoutError(f"{what}: element {pos} {'repeated' if lo < pos else 'missing'}")
        pos = hi
    if pos != total:
        raise LayoutError(f"{what}: covered {pos} of {total} elements")


def _check_dot_copies(owner, parts, n_i: int) -> None:
    by_ct: dict = {}
    for a in parts:
        by_ct.setdefault(a.ct, []).append(a)
    if len(by_ct) > 1:  # one copy spread across ciphertexts
        _check_cover(f"inqueue {owner!r}", [(a.elem_lo, a.elem_lo + a.width) for a in parts], n_i)
        return
    for a in parts:
        if a.elem_lo != 0 or a.width != n_i:
            raise LayoutError(f"dot copy of {owner!r} is not a full vector")


def _check_dot_prior(owner, parts, total: int) -> None:
    chunks: dict = {}
    for a in parts:
        if a.rows is None:
            raise LayoutError(f"dot tail of {owner!r} does not record its rows")
        chunks.setdefault((a.elem_lo, a.elem_lo + a.width), []).append(a.rows)
    n_rows = None
    for (lo, hi), row_ranges in chunks.items():
        pos = 0
        for r_lo, r_hi in sorted(row_ranges):
            if r_lo != pos:
                raise LayoutError(f"prior {owner!r}: output row {pos} of chunk {lo} "
                                  f"{'repeated' if r_lo < pos else 'missing'}")
            pos = r_hi
        if n_rows not in (None, pos):
            raise LayoutError(f"prior {owner!r}: uneven row coverage across chunks")
        n_rows = pos
    n_cols = 0
    for lo, hi in sorted(chunks):
        if lo != n_cols:
            raise LayoutError(f"prior {owner!r}: dot column {n_cols} not covered once")
        n_cols = hi
    if n_rows * n_cols != total:
        raise LayoutError(f"prior {owner!r}: {n_rows}x{n_cols} products, expected {total}")


def corrupt_layout(lay: ChainLayout, rng, mode: str = "overlap") -> ChainLayout:
    """Fault injection for checker tests: return a damaged copy."""
    import copy
    bad = copy.deepcopy(lay)
    live = [i for i, a in enumerate(bad.assignments)
            if (a.width > 1 or mode != "overlap") and (mode != "shift" or a.role != IDLE)]
    i = live[int(rng.integers(len(live)))]
    a = bad.assignments[i]
    if mode == "overlap":
        bad.assignments[i] = replace(a, slot_hi=a.slot_hi - 1)
        bad.assignments.append(replace(a, slot_lo=a.slot_hi - 2, slot_hi=a.slot_hi - 1))
    elif mode == "drop":
        del bad.assignments[i]
    elif mode == "shift":
        bad.assignments[i] = replace(a, elem_lo=a.elem_lo + 1)
    else:
        raise ValueError(f"unknown fault mode {mode!r}")
    return bad


# -- segmentation and model batch size ----------------------------------------

def segment_shape(shape: ConvShape, max_batch: int, params: SlotParams) -> list[ConvShape]:
    """Split the input channels so every part's online per-prior batch is <= max_batch."""
    if max_batch < 1:
        raise PlanError("max_batch must be >= 1")

    def ok(c: int) -> bool:
        pl = plan_online(_with_channels(shape, c), params)
        return pl.per_prior_batch is not None and pl.per_prior_batch <= max_batch

    if not ok(1):
        raise PlanError(f"even a single input channel needs more than {max_batch} in-queue inputs")
    for k in range(1, shape.C_i + 1):
        sizes = [shape.C_i // k + (1 if i < shape.C_i % k else 0) for i in range(k)]
        if all(ok(c) for c in set(sizes)):
            return [_with_channels(shape, c) for c in sizes]
    raise PlanError("no feasible channel split")  # unreachable: k = C_i uses ok(1)


def _with_channels(shape: ConvShape, c: int) -> ConvShape:
    return ConvShape(c, shape.H_i, shape.W_i, shape.C_o, shape.H_f, shape.W_f,
                     shape.stride, shape.padding)


@dataclass(frozen=True)
class ModelBatch:
    batch_size: int
    new_run_blocks: tuple[int, ...]


def model_batch_size(plans: Sequence[OnlinePlan]) -> ModelBatch:
    """Largest per-prior batch among blocks; blocks without idle slots are flagged."""
    if not plans:
        raise PlanError("need at least one plan")
    sizes = [pl.per_prior_batch for pl in plans if pl.recycles]
    flagged = tuple(i for i, pl in enumerate(plans) if not pl.recycles)
    return ModelBatch(max(sizes) if sizes else 1, flagged)


def bsize(value: int | None) -> int:
    """Tabulated b-size: 1 means no idle slot (a separate run is needed)."""
    return 1 if value is None else value


def parse_shape(text: str, stride: int = 1, padding: str = "same") -> ConvShape:
    parts = [int(t) for t in text.replace(" ", "").split(",") if t]
    if len(parts) != 4:
        raise ValueError(f"expected 'H_i,C_i,f_h,C_o', got {text!r}")
    return ConvShape.from_tuple(*parts, stride=stride, padding=padding)


def plan_rows(shapes: Iterable[ConvShape], params: SlotParams) -> list[dict]:
    out = []
    for sh in shapes:
        on = plan_online(sh, params)
        off = plan_offline(sh, params)
        out.append({
            "shape": sh.label(),
            "s_hat": on.s_hat,
            "online_bsize": bsize(on.per_prior_batch),
            "rows_per_ct": off.rows_per_ct,
            "n": off.n,
            "s_tilde": off.s_tilde,
            "offline_bsize": bsize(off.per_prior_batch),
        })
    return out
