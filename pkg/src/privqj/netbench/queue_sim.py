"""Discrete-event model of a batched inference queue under three prior-input policies.

A single server processes in-queue inputs FIFO in batches of ``b``. A batch
starts once its last member has arrived and the previous batch is done. A
prior input joins the first batch that starts at or after its arrival:

* ``drop_out``: the prior takes a batch slot, pushing the batch's last
  in-queue input (and, in cascade, one per later batch) into the next run;
* ``batch_expand``: the prior is computed as one more batch member, adding one
  per-input share of the batch cost;
* ``piggyback``: the prior rides idle slots and adds only its share frame.

Priors with no in-queue batch left to join run as a batch of their own.
Times are modeled seconds, not measurements.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

POLICIES = ("batch_expand", "drop_out", "piggyback")


@dataclass(frozen=True)
class Arrival:
    id: str
    time: float
    prior: bool = False


@dataclass(frozen=True)
class BlockCosts:
    """Modeled seconds for one batch run and for what a single prior adds to it."""
    batch_size: int
    batch_time: float           # full batch run
    per_input_time: float       # one more input computed conventionally
    prior_frame_time: float     # piggyback: the prior's share frame only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if min(self.batch_time, self.per_input_time, self.prior_frame_time) < 0:
            raise ValueError("costs must be non-negative")

    @classmethod
    def proportional(cls, batch_size: int, batch_time: float, prior_frame_time: float) -> "BlockCosts":
        return cls(batch_size, batch_time, batch_time / batch_size, prior_frame_time)


@dataclass(frozen=True)
class QueuePolicy:
    kind: str
    costs: BlockCosts

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")

    def added(self, n_priors: int) -> float:
        """Extra run time of a batch that absorbs ``n_priors`` priors."""
        if self.kind == "batch_expand":
            return n_priors * self.costs.per_input_time
        if self.kind == "piggyback":
            return n_priors * self.costs.prior_frame_time
        return 0.0


_NUM = r"(-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
_ITEM = re.compile(r"^(?:(\d+)\s*[x*]\s*)?([QqPp])\s*@\s*" + _NUM + r"(?:\s*\+\s*" + _NUM + r")?$")


def parse_arrivals(text: str) -> list[Arrival]:
    """Parse e.g. ``"16xQ@0, P@0.5, 8xQ@1+0.1"``.

    ``kxQ@t+d`` is k in-queue arrivals starting at t spaced d apart; ``P`` marks
    priors. Ids are q0, q1, ... and p0, p1, ... in order of appearance.
    """
    out, nq, np_ = [], 0, 0
    for raw in text.split(","):
        item = raw.strip()
        if not item:
            continue
        m = _ITEM.match(item)
        if m is None:
            raise ValueError(f"cannot parse arrival item {item!r}")
        k = int(m.group(1) or 1)
        prior = m.group(2).lower() == "p"
        t0, dt = float(m.group(3)), float(m.group(4) or 0.0)
        if t0 < 0 or dt < 0:
            raise ValueError(f"negative time in {item!r}")
        for j in range(k):
            if prior:
                out.append(Arrival(f"p{np_}", t0 + j * dt, True))
                np_ += 1
            else:
                out.append(Arrival(f"q{nq}", t0 + j * dt, False))
                nq += 1
    if not out:
        raise ValueError("no arrivals given")
    return out


@dataclass(frozen=True)
class Completion:
    id: str
    prior: bool
    arrival: float
    start: float
    done: float
    batch: int

    @property
    def wait(self) -> float:
        return self.done - self.arrival


def _run(arrivals: list[Arrival], policy: QueuePolicy) -> dict[str, Completion]:
    c = policy.costs
    b = c.batch_size
    inq = sorted((a for a in arrivals if not a.prior), key=lambda a: (a.time, a.id))
    pri = sorted((a for a in arrivals if a.prior), key=lambda a: (a.time, a.id))
    res: dict[str, Completion] = {}
    free, k = 0.0, 0
    while inq or pri:
        if inq:
            cand = inq[:b]
            start = max(free, cand[-1].time)
            joined = [q for q in pri if q.time <= start]
            if policy.kind == "drop_out":
                joined = joined[:b]
                members = inq[:b - len(joined)]
                start = max([free] + [a.time for a in members + joined])
            else:
                members = cand
            dur = c.batch_time + policy.added(len(joined))
            if policy.kind == "drop_out":
                dur = c.batch_time
        else:
            joined, members = pri[:b], []
            start = max(free, joined[-1].time)
            dur = c.batch_time
        done = start + dur
        for a in members + joined:
            res[a.id] = Completion(a.id, a.prior, a.time, start, done, k)
        ids = {a.id for a in members + joined}
        inq = [a for a in inq if a.id not in ids]
        pri = [a for a in pri if a.id not in ids]
        free, k = done, k + 1
    return res


@dataclass(frozen=True)
class QueueRow:
    id: str
    prior: bool
    arrival: float
    done: float
    wait: float
    added_wait: float       # vs the same queue with priors removed (0 for priors)
    batch: int


def simulate(arrivals: list[Arrival], policy: QueuePolicy) -> list[QueueRow]:
    """Per-input completion times, with the waiting time each prior adds."""
    with_p = _run(arrivals, policy)
    base = _run([a for a in arrivals if not a.prior], policy)
    rows = []
    for a in sorted(arrivals, key=lambda a: (a.time, a.id)):
        r = with_p[a.id]
        added = 0.0 if a.prior else r.done - base[a.id].done
        rows.append(QueueRow(a.id, a.prior, r.arrival, r.done, r.wait,
                             added, r.batch))
    return rows


def summary(rows: list[QueueRow]) -> dict:
    inq = [r for r in rows if not r.prior]
    pri = [r for r in rows if r.prior]
    return {
        "inqueue": len(inq),
        "priors": len(pri),
        "total_added_wait": sum(r.added_wait for r in inq),
        "max_added_wait": max((r.added_wait for r in inq), default=0.0),
        "delayed_inputs": sum(1 for r in inq if r.added_wait > 1e-12),
        "mean_prior_wait": sum(r.wait for r in pri) / len(pri) if pri else 0.0,
    }
