"""Analytic operation-count models of prior-input cost for published HE/MPC schemes.

Two tables are modelled. ``added`` gives the exact per-prior operation counts
added to the in-queue inputs that follow a prior one (offline and online);
``asymptotic`` gives the order-of-growth argument of each scheme's per-input
cost. Counts are exact rationals; a formula dividing by C_n is out of domain
when C_n = floor(N / (C_i H_i W_i)) is zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from ..ring import ConvShape, out_dims

OUT_OF_DOMAIN = "out of domain"

OFFLINE_OPS = ("enc", "cmult", "dec", "add")
ONLINE_OPS = ("rot", "enc", "cmult", "dec", "add", "extr")
ASYM_COLS = ("rot", "extr", "mult", "dec", "cts", "rounds")


@dataclass(frozen=True)
class Dims:
    C_i: int
    H_i: int
    W_i: int
    C_o: int
    H_o: int
    W_o: int
    f_h: int
    N: int

    @classmethod
    def from_shape(cls, shape: ConvShape, N: int) -> "Dims":
        H_o, W_o = out_dims(shape)
        return cls(shape.C_i, shape.H_i, shape.W_i, shape.C_o, H_o, W_o, shape.H_f, N)

    @property
    def C_n(self) -> int:
        return self.N // (self.C_i * self.H_i * self.W_i)


@dataclass(frozen=True)
class Formula:
    fn: Callable[[Dims], Fraction]
    text: str
    uses_cn: bool = False
    bound: str = "="        # "=" exact, ">=" lower bound

    def evaluate(self, d: Dims):
        if self.uses_cn and d.C_n == 0:
            return OUT_OF_DOMAIN
        return Fraction(self.fn(d))


ZERO = Formula(lambda d: 0, "-")


def _f(text: str, fn, bound: str = "=") -> Formula:
    return Formula(fn, text, "C_n" in text, bound)


def _q(a, b) -> Fraction:
    return Fraction(a, b)


# Per-prior added counts; a missing entry means the scheme adds nothing there.
TABLE2 = {
    "CrypTFlow2": {
        "mx": True,
        "offline": {},
        "online": {
            "rot": _f("(f_h^2-1)C_i/C_n + C_o - C_o/C_n",
                      lambda d: _q((d.f_h ** 2 - 1) * d.C_i, d.C_n) + d.C_o - _q(d.C_o, d.C_n), ">="),
            "enc": _f("C_i/C_n", lambda d: _q(d.C_i, d.C_n)),
            "cmult": _f("f_h^2 C_i C_o/C_n", lambda d: _q(d.f_h ** 2 * d.C_i * d.C_o, d.C_n)),
            "dec": _f("C_o/C_n", lambda d: _q(d.C_o, d.C_n)),
            "add": _f("(C_i + C_o C_i f_h^2)/C_n",
                      lambda d: _q(d.C_i + d.C_o * d.C_i * d.f_h ** 2, d.C_n)),
        },
    },
    "Cheetah": {
        "mx": True,
        "offline": {},
        "online": {
            "enc": _f("C_i H_i W_i/N", lambda d: _q(d.C_i * d.H_i * d.W_i, d.N)),
            "cmult": _f("C_o C_i H_i W_i/N", lambda d: _q(d.C_o * d.C_i * d.H_i * d.W_i, d.N)),
            "dec": _f("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
            "add": _f("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
            "extr": _f("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
        },
    },
    "FIT": {
        "mx": False,
        "offline": {
            "enc": _f("f_h^2 C_i/C_n", lambda d: _q(d.f_h ** 2 * d.C_i, d.C_n)),
            "cmult": _f("f_h^2 C_i C_o/C_n", lambda d: _q(d.f_h ** 2 * d.C_i * d.C_o, d.C_n)),
            "dec": _f("C_o", lambda d: d.C_o),
            "add": _f("f_h^2 C_i C_o/C_n", lambda d: _q(d.f_h ** 2 * d.C_i * d.C_o, d.C_n)),
        },
        "online": {
            "cmult": _f("2 C_i/C_n", lambda d: _q(2 * d.C_i, d.C_n)),
            "dec": _f("C_i/C_n", lambda d: _q(d.C_i, d.C_n)),
            "add": _f("2 C_i/C_n", lambda d: _q(2 * d.C_i, d.C_n)),
        },
    },
    "NEXUS": {
        "mx": True,
        "offline": {
            "enc": _f("C_o", lambda d: d.C_o),
            "cmult": _f("f_h^2 C_i C_o", lambda d: d.f_h ** 2 * d.C_i * d.C_o),
            "add": _f("(f_h^2 C_i - 1) C_o", lambda d: (d.f_h ** 2 * d.C_i - 1) * d.C_o),
        },
        "online": {
            "dec": _f("C_o", lambda d: d.C_o),
            "add": _f("2 C_o", lambda d: 2 * d.C_o),
        },
    },
    "PrivQJ": {"mx": False, "offline": {}, "online": {}},
}


def _o(text: str, fn) -> Formula:
    return Formula(fn, f"O({text})")


_GZ = {
    "rot": _o("C_i H_i W_i f_h^2 + C_i C_o H_i W_i",
              lambda d: d.C_i * d.H_i * d.W_i * d.f_h ** 2 + d.C_i * d.C_o * d.H_i * d.W_i),
    "mult": _o("C_i C_o H_i W_i f_h^2", lambda d: d.C_i * d.C_o * d.H_i * d.W_i * d.f_h ** 2),
    "dec": _o("C_o H_o W_o/N", lambda d: _q(d.C_o * d.H_o * d.W_o, d.N)),
    "cts": _o("(C_i H_i W_i + C_o H_o W_o)/N",
              lambda d: _q(d.C_i * d.H_i * d.W_i + d.C_o * d.H_o * d.W_o, d.N)),
}

# Order-of-growth arguments of per-input cost; "rounds" holds the round text.
TABLE1 = {
    "CryptoNets": {
        "rot": ZERO,
        "mult": _o("C_i C_o H_o W_o f_h^2", lambda d: d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2),
        "dec": _o("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
        "cts": _o("C_i H_i W_i + C_o H_o W_o",
                  lambda d: d.C_i * d.H_i * d.W_i + d.C_o * d.H_o * d.W_o),
        "rounds": "1 + rd",
    },
    "MiniONN": {
        "rot": ZERO,
        "mult": _o("C_i C_o H_o W_o f_h^2", lambda d: d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2),
        "dec": _o("C_i C_o H_o W_o f_h^2/N",
                  lambda d: _q(d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2, d.N)),
        "cts": _o("C_i C_o H_o W_o f_h^2/N",
                  lambda d: _q(d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2, d.N)),
        "rounds": "0.5 + rd",
    },
    "GAZELLE": dict(_GZ, rounds="1 + rd"),
    "DELPHI": dict(_GZ, rounds="0.5 + rd"),
    "CrypTFlow2": dict(_GZ, rot=_o("C_i H_i W_i f_h^2 + C_o",
                                   lambda d: d.C_i * d.H_i * d.W_i * d.f_h ** 2 + d.C_o),
                       rounds="1 + rd"),
    "Cheetah": {
        "rot": ZERO,
        "extr": _o("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
        "mult": _o("C_i C_o H_i W_i", lambda d: d.C_i * d.C_o * d.H_i * d.W_i),
        "dec": _o("C_o H_o W_o", lambda d: d.C_o * d.H_o * d.W_o),
        "cts": _o("C_i H_i W_i/N + C_o H_o W_o",
                  lambda d: _q(d.C_i * d.H_i * d.W_i, d.N) + d.C_o * d.H_o * d.W_o),
        "rounds": "1 + rd",
    },
    "FIT": {
        "rot": ZERO, "extr": ZERO,
        "mult": _o("C_i C_o H_o W_o f_h^2", lambda d: d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2),
        "dec": _o("C_i H_i W_i/N + C_o", lambda d: _q(d.C_i * d.H_i * d.W_i, d.N) + d.C_o),
        "cts": _o("C_i C_o H_o W_o f_h^2/N + C_o",
                  lambda d: _q(d.C_i * d.C_o * d.H_o * d.W_o * d.f_h ** 2, d.N) + d.C_o),
        "rounds": "1 + rd_f'",
    },
    "NEXUS": {
        "rot": ZERO, "extr": ZERO,
        "mult": _o("C_i C_o f_h^2", lambda d: d.C_i * d.C_o * d.f_h ** 2),
        "dec": _o("C_o", lambda d: d.C_o),
        "cts": _o("C_i C_o f_h^2/N + C_o", lambda d: _q(d.C_i * d.C_o * d.f_h ** 2, d.N) + d.C_o),
        "rounds": "1 + rd",
    },
    "PrivQJ": {"rot": ZERO, "extr": ZERO, "mult": ZERO, "dec": ZERO, "cts": ZERO,
               "rounds": "0.5"},
}

TABLE2_SCHEMES = tuple(TABLE2)
TABLE1_SCHEMES = tuple(TABLE1)


def _lookup(table: dict, scheme: str) -> str:
    for k in table:
        if k.lower() == scheme.lower():
            return k
    raise ValueError(f"unknown scheme {scheme!r}; known: {', '.join(table)}")


@dataclass(frozen=True)
class BaselineCostModel:
    scheme: str

    def __post_init__(self):
        known = {k.lower(): k for k in (*TABLE1, *TABLE2)}
        if self.scheme.lower() not in known:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", known[self.scheme.lower()])

    @property
    def has_added(self) -> bool:
        return self.scheme in TABLE2

    def added(self, d: Dims) -> dict:
        """Per-prior added counts keyed 'offline/op' and 'online/op'; Mx under 'mx'."""
        row = TABLE2[_lookup(TABLE2, self.scheme)]
        out = {}
        for phase, ops in (("offline", OFFLINE_OPS), ("online", ONLINE_OPS)):
            for op in ops:
                out[f"{phase}/{op}"] = row[phase].get(op, ZERO).evaluate(d)
        out["mx"] = row["mx"]
        return out

    def added_formulas(self) -> dict:
        row = TABLE2[_lookup(TABLE2, self.scheme)]
        return {f"{ph}/{op}": (row[ph][op].bound + " " + row[ph][op].text) if op in row[ph] else "-"
                for ph, ops in (("offline", OFFLINE_OPS), ("online", ONLINE_OPS)) for op in ops}

    def asymptotic(self, d: Dims) -> dict:
        """Order-of-growth arguments (not counts); '-' where the scheme has no such op."""
        row = TABLE1[_lookup(TABLE1, self.scheme)]
        out = {}
        for col in ASYM_COLS:
            if col == "rounds":
                out[col] = row["rounds"]
            elif col in row:
                out[col] = row[col].evaluate(d)
            else:
                out[col] = "-"
        return out


def fmt(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{float(v):.6g}"
    if isinstance(v, bool):
        return "yes" if v else "no"
    return str(v)


def baseline_rows(schemes, shape: ConvShape, N: int, kind: str = "added") -> list[dict]:
    """One row per scheme; kind is 'added' (exact per-prior counts) or 'asymptotic'."""
    d = Dims.from_shape(shape, N)
    rows = []
    for s in schemes:
        m = BaselineCostModel(s)
        if kind == "added":
            if not m.has_added:
                continue
            vals = m.added(d)
        elif kind == "asymptotic":
            vals = m.asymptotic(d)
        else:
            raise ValueError(f"unknown baseline table {kind!r}")
        rows.append({"scheme": m.scheme, "shape": shape.label(), "N": N, "C_n": d.C_n,
                     **{k: fmt(v) for k, v in vals.items()}})
    return rows
