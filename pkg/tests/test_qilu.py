from fractions import Fraction

import numpy as np
import pytest

from mplab.errors import Overflowed, ZeroMatrix
from mplab.qilu import INT32_MAX, FixedPointMatrix, mulhi32, qilu_factor, to_fixed
from mplab.refine import backward_error


def test_mulhi32_powers_of_two():
    # 0.25 * 0.25 = 0.0625 = 2^28 / 2^32
    assert mulhi32(2 ** 30, 2 ** 30) == 2 ** 28
    assert mulhi32(0, 12345) == 0
    assert mulhi32(-(2 ** 30), 2 ** 30) == -(2 ** 28)


def test_mulhi32_against_64bit_reference():
    rng = np.random.default_rng(0)
    xs = rng.integers(-(2 ** 31) + 1, 2 ** 31, size=10 ** 6, dtype=np.int64)
    ys = rng.integers(-(2 ** 31) + 1, 2 ** 31, size=10 ** 6, dtype=np.int64)
    got = (xs * ys) >> 32
    for k in rng.integers(0, 10 ** 6, size=2000):
        assert mulhi32(int(xs[k]), int(ys[k])) == int(got[k])
    specials = [0, 1, -1, 2 ** 30, -(2 ** 30), 2 ** 31 - 1, -(2 ** 31) + 1]
    for x in specials:
        for y in specials:
            want = (x * y) >> 32   # python ints shift with floor semantics
            assert mulhi32(x, y) == want


def test_to_fixed_hand_case():
    fx = to_fixed(np.array([[0.5]]), r=2)
    assert fx.scale_m == 2.0
    assert fx.data[0, 0] == 2 ** 30
    assert fx.range_r == 2


def test_to_fixed_roundtrip_bound():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (40, 40))
    for r in [2, 4, 10]:
        fx = to_fixed(a, r)
        back = fx.to_doubles() * fx.scale_m
        # quantization half-ulp plus the division rounding
        bound = fx.scale_m * (2.0 ** -33 + 2.0 ** -52)
        assert np.abs(back - a).max() <= bound
    # r = 1 puts the extreme entries at 2^31, which clamps by one quantum
    fx = to_fixed(a, 1)
    back = fx.to_doubles() * fx.scale_m
    assert np.abs(back - a).max() <= fx.scale_m * 2.0 ** -31


def test_to_fixed_r0_clamps():
    fx = to_fixed(np.array([[1.0]]), r=0)
    assert fx.data[0, 0] == INT32_MAX   # 2^32 clamps to int32 max


def test_to_fixed_zero_matrix():
    with pytest.raises(ZeroMatrix):
        to_fixed(np.zeros((3, 3)), 2)


def test_qilu_1x1_exact():
    perm, l, u, m = qilu_factor(np.array([[0.5]]), r=2)
    assert m == 2.0
    assert l[0, 0] == 1.0
    # exact rational check: P(a/m) = LU with no error on this instance
    assert Fraction(u[0, 0]) == Fraction(1, 4)


def test_qilu_reconstruction_small():
    rng = np.random.default_rng(2)
    a = rng.uniform(-1, 1, (30, 30))
    perm, l, u, m = qilu_factor(a, r=6)
    recon = (l @ u) * m
    # conversion half-ulp plus one truncated mulhi per elimination step
    assert np.abs(recon - a[perm]).max() <= m * 31 * 2.0 ** -32


def test_qilu_backward_error_comparable_to_fp32():
    # baseline: the complete single-precision solver (factor + solves)
    from mplab.dense import lu_emulated, tri_solve_emulated
    from mplab.prec import FP32
    n = 200
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, (n, n))
        b = rng.uniform(-1, 1, n)
        perm, l, u, m = qilu_factor(a, r=10)
        y = np.linalg.solve(l, (b / m)[perm])
        x = np.linalg.solve(u, y)
        be_q = backward_error(a, x, b)
        p32, l32, u32 = lu_emulated(a, FP32)
        y32 = tri_solve_emulated(l32, b[p32], "lower", unit_diag=True, fmt=FP32)
        x32 = tri_solve_emulated(u32, y32, "upper", fmt=FP32)
        be_32 = backward_error(a, x32, b)
        ratios.append(be_q / be_32)
    gm = np.exp(np.mean(np.log(ratios)))
    assert gm <= 10.0


def test_qilu_error_grows_with_r():
    n = 100
    means = {}
    for r in [6, 8, 10]:
        errs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            a = rng.uniform(-1, 1, (n, n))
            b = rng.uniform(-1, 1, n)
            perm, l, u, m = qilu_factor(a, r=r)
            x = np.linalg.solve(u, np.linalg.solve(l, (b / m)[perm]))
            errs.append(backward_error(a, x, b))
        means[r] = np.exp(np.mean(np.log(errs)))
    assert means[6] <= means[8] <= means[10]


def test_qilu_small_r_overflows_at_scale():
    # elimination growth exceeds the int32 headroom 2^(r-1) for small r, so
    # random n=100 instances must fail loudly, never return a corrupt factor
    rng = np.random.default_rng(7)
    a = rng.uniform(-1, 1, (100, 100))
    with pytest.raises(Overflowed):
        qilu_factor(a, r=2)


def test_qilu_overflow_reported_on_growth_matrix():
    # Wilkinson-type growth: |trailing| doubles each step
    n = 34
    a = np.eye(n) - np.tril(np.ones((n, n)), -1)
    a[:, -1] = 1.0
    with pytest.raises(Overflowed):
        qilu_factor(a, r=1)


def test_qilu_deterministic():
    rng = np.random.default_rng(5)
    a = rng.uniform(-1, 1, (50, 50))
    r1 = qilu_factor(a, r=8)
    r2 = qilu_factor(a, r=8)
    for x, y in zip(r1[:3], r2[:3]):
        assert np.array_equal(x, y)


def test_fixed_point_matrix_invariant():
    rng = np.random.default_rng(6)
    a = rng.uniform(-1, 1, (10, 10))
    fx = to_fixed(a, 3)
    assert np.abs(fx.data.astype(np.int64)).max() <= INT32_MAX
    assert np.abs(fx.to_doubles()).max() <= 2.0 ** -3
