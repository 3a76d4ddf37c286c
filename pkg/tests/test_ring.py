import numpy as np
import pytest
from hypothesis import given, strategies as st

from privqj.netbench.verify import naive_conv, random_small_shape
from privqj.ring import (DEFAULT_N, DEFAULT_P, ConvShape, Modulus, ShapeError, addmod, conv_ref,
                         dequantize, dot_ref, drelu_ref, flatten_kernel, im2col, matmul_mod,
                         mulmod, ntt_friendly_prime, out_dims, quantize, read_tensor, relu_ref,
                         signed_lift, submod, write_tensor)

PRIMES = [257, 65537, DEFAULT_P, (1 << 61) - 1]


def test_default_prime_is_ntt_friendly():
    p = DEFAULT_P
    assert p >= 1 << 25
    assert (p - 1) % (2 * DEFAULT_N) == 0
    assert all(p % d for d in range(2, 2000))
    # smallest such prime: no smaller candidate in the progression is prime
    step = 2 * DEFAULT_N
    c = -(-((1 << 25) - 1) // step) * step + 1
    while c < p:
        assert any(c % d == 0 for d in range(2, int(c ** 0.5) + 1))
        c += step
    assert ntt_friendly_prime(16, 200) == 257


def test_modulus_validation():
    assert Modulus(257).half == 128
    with pytest.raises(ValueError):
        Modulus(256)
    with pytest.raises(ValueError):
        Modulus(2)


@pytest.mark.parametrize("h,f,s,pad,want", [(56, 3, 1, "same", 56), (5, 3, 1, "valid", 3),
                                            (7, 3, 2, "same", 4)])
def test_out_dims(h, f, s, pad, want):
    assert out_dims(ConvShape(1, h, h, 1, f, f, s, pad)) == (want, want)


def test_shape_validation():
    with pytest.raises(ShapeError):
        ConvShape(1, 4, 4, 1, 2, 2)           # even filter with same padding
    with pytest.raises(ShapeError):
        ConvShape(1, 2, 2, 1, 3, 3, 1, "valid")
    with pytest.raises(ShapeError):
        ConvShape(0, 4, 4, 1, 3, 3)


def test_conv_identity_and_hand_example():
    sh = ConvShape(1, 1, 1, 1, 1, 1)
    assert conv_ref(np.array([[[7]]]), np.array([[[[1]]]]), sh, 257).tolist() == [[[7]]]
    sh = ConvShape(1, 2, 2, 1, 2, 2, 1, "valid")
    x = np.array([[[1, 2], [3, 4]]])
    assert conv_ref(x, np.ones((1, 1, 2, 2), np.int64), sh, 257).tolist() == [[[10]]]


def test_conv_matches_naive_oracle(rng):
    for _ in range(100):
        sh = random_small_shape(rng, 4, 7)
        p = int(rng.choice([257, DEFAULT_P]))
        x = rng.integers(0, p, size=(sh.C_i, sh.H_i, sh.W_i))
        k = rng.integers(0, p, size=(sh.C_o, sh.C_i, sh.H_f, sh.W_f))
        assert np.array_equal(conv_ref(x, k, sh, p), naive_conv(x, k, sh, p))


def test_same_padding_stride1_is_centred(rng):
    # with stride 1 and odd filters the padding is (f-1)/2 on each side
    sh = ConvShape(2, 4, 4, 3, 3, 3)
    p = 257
    x = rng.integers(0, p, size=(2, 4, 4))
    k = rng.integers(0, p, size=(3, 2, 3, 3))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    want = np.zeros((3, 4, 4), np.int64)
    for o in range(3):
        for i in range(4):
            for j in range(4):
                want[o, i, j] = int((xp[:, i:i + 3, j:j + 3] * k[o]).sum()) % p
    assert np.array_equal(conv_ref(x, k, sh, p), want)


def test_im2col_examples(rng):
    sh = ConvShape(1, 1, 1, 1, 1, 1)
    assert im2col(np.array([[[9]]]), sh).tolist() == [[9]]
    sh = ConvShape(1, 3, 3, 1, 3, 3)
    x = np.arange(1, 10).reshape(1, 3, 3)
    m = im2col(x, sh)
    assert m.shape == (9, 9)
    assert m[:, 4].tolist() == list(range(1, 10))


def test_im2col_product_identity(rng):
    for _ in range(50):
        sh = random_small_shape(rng, 4, 8)
        p = DEFAULT_P
        x = rng.integers(0, p, size=(sh.C_i, sh.H_i, sh.W_i))
        k = rng.integers(0, p, size=(sh.C_o, sh.C_i, sh.H_f, sh.W_f))
        y = matmul_mod(flatten_kernel(k, sh), im2col(x, sh), p)
        assert np.array_equal(y.reshape(-1), naive_conv(x, k, sh, p).reshape(-1))


def test_dot_ref():
    assert dot_ref(np.eye(2, dtype=np.int64), np.array([3, 5]), 257).tolist() == [3, 5]
    assert dot_ref(np.array([[1, 2]]), np.array([3, 4]), 101).tolist() == [11]


def test_dot_ref_random(rng):
    p = 257
    w = rng.integers(0, p, size=(4, 6))
    a = rng.integers(0, p, size=6)
    want = [sum(int(w[i, j]) * int(a[j]) for j in range(6)) % p for i in range(4)]
    assert dot_ref(w, a, p).tolist() == want


def test_signed_lift_examples_and_bijection():
    assert signed_lift(5, 257) == 5
    assert signed_lift(254, 257) == -3
    assert signed_lift(128, 257) == 128
    v = signed_lift(np.arange(257), 257)
    assert sorted(v.tolist()) == list(range(-128, 129))


def test_drelu_relu_examples(rng):
    p = 257
    assert drelu_ref(np.array([5, 0, p - 3]), p).tolist() == [1, 0, 0]
    assert relu_ref(np.array([5, 0, p - 3]), p).tolist() == [5, 0, 0]
    x = rng.integers(0, DEFAULT_P, size=1000)
    assert np.array_equal(relu_ref(x, DEFAULT_P), mulmod(x, drelu_ref(x, DEFAULT_P), DEFAULT_P))
    want = np.maximum(signed_lift(x, DEFAULT_P), 0)
    assert np.array_equal(relu_ref(x, DEFAULT_P), want)


def test_quantize():
    assert quantize(np.array([0.0]), 16, 257).tolist() == [0]
    assert quantize(np.array([-1.5]), 2, 257).tolist() == [254]


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=20),
       st.integers(1, 64))
def test_quantize_roundtrip(vals, scale):
    x = np.array(vals)
    back = dequantize(quantize(x, scale, DEFAULT_P), scale, DEFAULT_P)
    assert np.all(np.abs(back - x) <= 1 / (2 * scale) + 1e-12)


@given(st.sampled_from(PRIMES), st.integers(1, 5), st.integers(1, 400), st.integers(1, 5),
       st.integers(0, 2 ** 32))
def test_matmul_mod_exact(p, m, inner, n, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, p, size=(m, inner), dtype=np.int64)
    b = r.integers(0, p, size=(inner, n), dtype=np.int64)
    want = (a.astype(object) @ b.astype(object)) % p
    assert np.array_equal(matmul_mod(a, b, p).astype(object), want)


def test_matmul_mod_extremes():
    for p in PRIMES:
        a = np.full((2, 1000), p - 1, dtype=np.int64)
        b = np.full((1000, 3), p - 1, dtype=np.int64)
        assert (matmul_mod(a, b, p) == (1000 * (p - 1) ** 2) % p).all()


@given(st.sampled_from(PRIMES), st.integers(0, 2 ** 32))
def test_elementwise_ops(p, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, p, size=50, dtype=np.int64)
    b = r.integers(0, p, size=50, dtype=np.int64)
    ao, bo = a.astype(object), b.astype(object)
    assert np.array_equal(addmod(a, b, p).astype(object), (ao + bo) % p)
    assert np.array_equal(submod(a, b, p).astype(object), (ao - bo) % p)
    assert np.array_equal(mulmod(a, b, p).astype(object), (ao * bo) % p)


def test_tensor_fixture_roundtrip(tmp_path, rng):
    x = rng.integers(0, 257, size=(2, 3, 4))
    write_tensor(tmp_path / "x.txt", x, 257)
    y, p = read_tensor(tmp_path / "x.txt")
    assert p == 257 and np.array_equal(x, y)
    (tmp_path / "bad.txt").write_text("1 1 2 257\n5\n")
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "bad.txt")
