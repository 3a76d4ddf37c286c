import numpy as np
import pytest
from hypothesis import given, strategies as st

from privqj.he import (CostMeter, KeyMismatchError, PlainTable, ReferenceHE, _slot_groups,
                       ct_wire_size)
from privqj.ring import DEFAULT_P

CAT = "online/inqueue"


@pytest.fixture
def he():
    return ReferenceHE(16, 257)


def test_keygen(he):
    a, b = he.keygen("client"), he.keygen("client")
    assert a.id != b.id and a.owner == "client"
    assert he.keygen("server").owner == "server"
    with pytest.raises(ValueError):
        he.keygen("eve")


def test_roundtrip_and_meter(he, rng):
    k = he.keygen("client")
    v = rng.integers(0, 257, 16)
    c = he.encrypt(v, k, CAT)
    assert np.array_equal(he.decrypt(c, k, CAT), v)
    assert not he.decrypt(he.encrypt(np.zeros(16, np.int64), k, CAT), k, CAT).any()
    assert he.meter.get("enc") == 2 and he.meter.get("dec") == 2
    with pytest.raises(ValueError):
        he.encrypt(np.zeros(15, np.int64), k, CAT)


def test_key_separation(he, rng):
    kc, ks = he.keygen("client"), he.keygen("server")
    c = he.encrypt(rng.integers(0, 257, 16), kc, CAT)
    d = he.encrypt(rng.integers(0, 257, 16), ks, CAT)
    with pytest.raises(KeyMismatchError):
        he.decrypt(c, ks, CAT)
    with pytest.raises(KeyMismatchError):
        he.add(c, d, CAT)
    with pytest.raises(TypeError):
        he.cmult(c, d, CAT)


def test_cmult_identities(he, rng):
    k = he.keygen("client")
    v = rng.integers(0, 257, 16)
    c = he.encrypt(v, k, CAT)
    assert np.array_equal(he.decrypt(he.cmult(np.ones(16, np.int64), c, CAT), k, CAT), v)
    assert not he.decrypt(he.cmult(np.zeros(16, np.int64), c, CAT), k, CAT).any()


@given(st.sampled_from([257, DEFAULT_P]), st.integers(0, 2 ** 32))
def test_homomorphism_properties(p, seed):
    r = np.random.default_rng(seed)
    he = ReferenceHE(32, p)
    k = he.keygen("client")
    a, b, c, w = (r.integers(0, p, 32) for _ in range(4))
    ea, eb, ec = (he.encrypt(v, k, CAT) for v in (a, b, c))
    dec = lambda x: he.decrypt(x, k, CAT)
    assert np.array_equal(dec(he.add(ea, eb, CAT)), (a + b) % p)
    assert np.array_equal(dec(he.add(ea, b, CAT)), (a + b) % p)
    assert np.array_equal(dec(he.add(he.add(ea, eb, CAT), ec, CAT)),
                          dec(he.add(ea, he.add(eb, ec, CAT), CAT)))
    assert np.array_equal(dec(he.add(ea, eb, CAT)), dec(he.add(eb, ea, CAT)))
    lhs = dec(he.cmult(w, he.add(ea, eb, CAT), CAT))
    rhs = dec(he.add(he.cmult(w, ea, CAT), he.cmult(w, eb, CAT), CAT))
    assert np.array_equal(lhs, rhs)
    assert he.meter.get("rot") == 0 and he.meter.get("extr") == 0


def test_wire_size():
    assert ct_wire_size(8192) == 131072
    assert ct_wire_size(8192, 1000) == 1000
    assert ReferenceHE(8192, DEFAULT_P, wire_size=77).wire_size == 77
    with pytest.raises(ValueError):
        ct_wire_size(8, 0)


def test_meter_categories():
    m = CostMeter()
    m.add("enc", "offline/prior", 3)
    m.add("enc", ("online", "inqueue"))
    assert m.get("enc", "offline", "prior") == 3 and m.get("enc") == 4
    assert m.snapshot() == {"enc/offline/prior": 3, "enc/online/inqueue": 1}
    with pytest.raises(ValueError):
        m.add("mul", CAT)
    with pytest.raises(ValueError):
        m.add("enc", "online/other")
    with pytest.raises(ValueError):
        m.add("enc", CAT, -1)


def _lincomb_oracle(X, table, colmap, offset, p):
    rows, N = table.shape[0], X.shape[1]
    out = np.zeros((rows, N), dtype=object)
    for j in range(rows):
        for s in range(N):
            acc = int(offset[j, s]) if offset is not None else 0
            for c in range(X.shape[0]):
                col = colmap[c, s]
                if col >= 0:
                    acc += int(table[j, col]) * int(X[c, s])
            out[j, s] = acc % p
    return out


@pytest.mark.parametrize("p", [257, DEFAULT_P])
def test_lincomb_table_matches_oracle(rng, p):
    N = 32
    for _ in range(20):
        he = ReferenceHE(N, p)
        k = he.keygen("client")
        n, rows, cols = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        X = rng.integers(0, p, (n, N))
        cts = [he.encrypt(x, k, CAT) for x in X]
        table = rng.integers(0, p, (rows, cols))
        colmap = rng.integers(-1, cols, (n, N))
        offset = rng.integers(0, p, (rows, N)) if rng.random() < 0.5 else None
        before = he.meter.snapshot()
        out = he.lincomb_table(cts, table, colmap, CAT, offset=offset)
        got = np.stack([he.decrypt(c, k, CAT) for c in out])
        assert np.array_equal(got.astype(object), _lincomb_oracle(X, table, colmap, offset, p))
        assert he.meter.get("cmult") - before.get("cmult/online/inqueue", 0) == rows * n
        adds = rows * (n - 1) + (rows if offset is not None else 0)
        assert he.meter.get("add") - before.get("add/online/inqueue", 0) == adds


def test_lincomb_tiled_groups(rng):
    # groups laid out as equal contiguous tiles exercise the batched path
    p, N, M, G = DEFAULT_P, 256, 16, 12
    he = ReferenceHE(N, p)
    k = he.keygen("client")
    n, rows, cols = 3, 5, 40
    X = rng.integers(0, p, (n, N))
    cts = [he.encrypt(x, k, CAT) for x in X]
    table = rng.integers(0, p, (rows, cols))
    colmap = np.full((n, N), -1)
    groups = []
    for g in range(G):
        sig = rng.integers(-1, cols, n)
        sl = np.arange(g * M, (g + 1) * M)
        colmap[:, sl] = sig[:, None]
        groups.append((sl, sig))
    offset = rng.integers(0, p, (rows, N))
    out = he.lincomb_table(cts, PlainTable(table, p), None, CAT, offset=offset, groups=groups)
    got = np.stack([he.decrypt(c, k, CAT) for c in out])
    assert np.array_equal(got.astype(object), _lincomb_oracle(X, table, colmap, offset, p))


def test_slot_groups_partition(rng):
    colmap = rng.integers(-1, 3, (2, 64))
    groups = _slot_groups(colmap, 2, 64)
    seen = np.concatenate([np.asarray(s) for s, _ in groups])
    assert sorted(seen.tolist()) == sorted(set(seen.tolist()))
    for slots, sig in groups:
        assert (colmap[:, slots] == np.asarray(sig)[:, None]).all()


def test_serialization_roundtrip(rng):
    for p in (257, DEFAULT_P, (1 << 61) - 1):
        he = ReferenceHE(16, p)
        k = he.keygen("server")
        cts = [he.encrypt(rng.integers(0, p, 16), k, CAT) for _ in range(3)]
        back = he.deserialize_many(he.serialize_many(cts))
        assert all(np.array_equal(a.payload, b.payload) and a.key == b.key
                   for a, b in zip(cts, back))
        one = he.deserialize(he.serialize(cts[0]))
        assert np.array_equal(one.payload, cts[0].payload)
        with pytest.raises(ValueError):
            he.deserialize_many(he.serialize_many(cts)[:-1])
