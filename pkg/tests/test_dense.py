import math

import numpy as np
import pytest

import mplab.dense as dense
from mplab.dense import (
    chol_emulated,
    chol_half,
    equilibrate,
    gemm_emulated,
    lu_emulated,
    scale_round,
    tri_solve_emulated,
)
from mplab.errors import (
    NonpositiveDiagonal,
    NotPositiveDefinite,
    OverflowInFactor,
    ZeroDiagonal,
    ZeroMatrix,
    ZeroRowOrColumn,
)
from mplab.prec import BF16, FP16, FP32, FP64, round_array

from refs import lu_partial_pivot


def random_spd(n, rng, shift=None):
    m = rng.uniform(-1.0, 1.0, (n, n))
    return m.T @ m + (n if shift is None else shift) * np.eye(n)


def spd_with_spread(n, lam_min, lam_max, rng):
    """SPD matrix with prescribed eigenvalue range (binary64 oracle)."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(lam_max, lam_min, n)
    return (q * lam) @ q.T


# -- gemm ------------------------------------------------------------------

def test_gemm_identity():
    out = gemm_emulated(np.eye(4), np.eye(4), in_fmt=FP16, acc_fmt=FP32)
    assert np.array_equal(out, np.eye(4))


def test_gemm_single_entry():
    out = gemm_emulated([[0.1]], [[1.0]], in_fmt=FP16, acc_fmt=FP32)
    x16 = float(np.float64(0.1).astype(np.float16))
    assert out[0, 0] == float(np.float32(x16) * np.float32(1.0))


def test_gemm_accumulate_precision_ordering():
    # fp32 accumulation beats fp16 accumulation on the same fp16 inputs
    n = 64
    errs16, errs32 = [], []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-1, 1, (n, n))
        b = rng.uniform(-1, 1, (n, n))
        a16 = round_array(a, FP16)
        b16 = round_array(b, FP16)
        ref = a16 @ b16
        g16 = gemm_emulated(a, b, in_fmt=FP16, acc_fmt=FP16)
        g32 = gemm_emulated(a, b, in_fmt=FP16, acc_fmt=FP32)
        errs16.append(np.abs(g16 - ref).max())
        errs32.append(np.abs(g32 - ref).max())
    assert np.median(errs32) < np.median(errs16)


def test_gemm_dimension_mismatch():
    with pytest.raises(ValueError):
        gemm_emulated(np.eye(3), np.eye(4), in_fmt=FP32, acc_fmt=FP32)


# -- lu ----------------------------------------------------------------------

def test_lu_identity():
    perm, l, u = lu_emulated(np.eye(5), FP16)
    assert np.array_equal(perm, np.arange(5))
    assert np.array_equal(l, np.eye(5))
    assert np.array_equal(u, np.eye(5))


def test_lu_fp64_matches_reference_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.uniform(-1, 1, (50, 50))
        perm, l, u = lu_emulated(a, FP64)
        rp, rl, ru = lu_partial_pivot(a)
        assert np.array_equal(perm, rp)
        assert np.array_equal(l, rl)
        assert np.array_equal(u, ru)


def test_lu_fp64_reconstruction():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (50, 50))
    perm, l, u = lu_emulated(a, FP64)
    err = np.abs(a[perm] - l @ u).max() / np.abs(a).max()
    assert err <= 1e-14


def test_lu_outputs_representable():
    rng = np.random.default_rng(2)
    a = rng.uniform(-1, 1, (20, 20))
    for fmt in [FP16, BF16, FP32]:
        perm, l, u = lu_emulated(a, fmt)
        assert np.array_equal(round_array(l, fmt), l)
        assert np.array_equal(round_array(u, fmt), u)


def test_lu_fp16_overflow_then_scaling_rescues():
    a = np.array([[1e6, 1.0], [1.0, 1.0]])
    with pytest.raises(OverflowInFactor):
        lu_emulated(a, FP16)
    r, s = equilibrate(a)
    sh = scale_round(a, r, s, 0.1, FP16)
    perm, l, u = lu_emulated(sh.a_h, FP16)
    assert np.isfinite(l).all() and np.isfinite(u).all()


def test_lu_native_path_equals_emulated_path(monkeypatch):
    rng = np.random.default_rng(3)
    a = rng.uniform(-4, 4, (30, 30))
    results = {}
    for label, patch in [("native", False), ("emulated", True)]:
        if patch:
            monkeypatch.setattr(dense, "native_dtype", lambda f: None)
        else:
            monkeypatch.undo()
        results[label] = lu_emulated(a, FP16)
    for x, y in zip(results["native"], results["emulated"]):
        assert np.array_equal(x, y)


# -- cholesky ---------------------------------------------------------------

def test_chol_identity():
    r = chol_emulated(np.eye(8), FP16)
    assert np.array_equal(r, np.eye(8))


def test_chol_underflowed_pivot_fails():
    a = np.diag([1.0, 1e-9])
    with pytest.raises(NotPositiveDefinite) as exc:
        chol_emulated(a, FP16)
    assert exc.value.index == 1


def test_chol_fp32_reconstruction():
    rng = np.random.default_rng(4)
    a = random_spd(30, rng)
    r = chol_emulated(a, FP32)
    err = np.abs(r.T @ r - a).max() / np.abs(a).max()
    assert err <= 1e-5


def test_chol_fp64_matches_numpy():
    rng = np.random.default_rng(5)
    a = random_spd(25, rng)
    r = chol_emulated(a, FP64)
    ref = np.linalg.cholesky(a).T
    assert np.abs(r - ref).max() <= 10 * 25 * 2.2e-16 * np.abs(ref).max()


# -- triangular solve ---------------------------------------------------------

def test_tri_solve_identity_and_2x2():
    b = np.array([3.0, -2.0, 5.0])
    assert np.array_equal(tri_solve_emulated(np.eye(3), b, "lower", fmt=FP64), b)
    t = np.array([[2.0, 0.0], [1.0, 2.0]])
    y = tri_solve_emulated(t, np.array([2.0, 3.0]), "lower", fmt=FP64)
    assert np.array_equal(y, np.array([1.0, 1.0]))


def test_tri_solve_fp16_error_bound():
    rng = np.random.default_rng(6)
    n = 20
    t = np.tril(rng.uniform(0.5, 1.0, (n, n)) * 0.1) + np.diag(rng.uniform(1.0, 2.0, n))
    b = rng.uniform(-1, 1, n)
    t16 = round_array(t, FP16)
    x = tri_solve_emulated(t16, b, "lower", fmt=FP16)
    xref = np.linalg.solve(t16, round_array(b, FP16))
    kappa = np.linalg.norm(t16, np.inf) * np.linalg.norm(np.linalg.inv(t16), np.inf)
    assert np.abs(x - xref).max() / np.abs(xref).max() <= 100 * FP16.u * kappa


def test_tri_solve_zero_diagonal():
    t = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ZeroDiagonal):
        tri_solve_emulated(t, np.ones(2), "lower", fmt=FP64)


def test_tri_solve_upper():
    rng = np.random.default_rng(7)
    t = np.triu(rng.uniform(0.5, 1.5, (10, 10)))
    b = rng.uniform(-1, 1, 10)
    x = tri_solve_emulated(t, b, "upper", fmt=FP64)
    assert np.allclose(t @ x, b, rtol=1e-12, atol=1e-12)


# -- equilibrate / scale_round -------------------------------------------------

def test_equilibrate_all_ones():
    a = np.array([[1.0, -1.0], [1.0, 1.0]])
    r, s = equilibrate(a)
    assert np.array_equal(r, np.ones(2))
    assert np.array_equal(s, np.ones(2))


def test_equilibrate_column_max_is_one():
    a = np.array([[100.0, 1.0], [1.0, 0.01]])
    r, s = equilibrate(a)
    scaled = r[:, None] * a * s[None, :]
    assert np.allclose(np.abs(scaled).max(axis=0), 1.0, rtol=1e-15)
    assert np.abs(scaled).max() <= 1.0 + 1e-15


def test_equilibrate_row_scaling_invariance():
    rng = np.random.default_rng(8)
    a = rng.uniform(0.1, 10.0, (6, 6))
    d = rng.uniform(0.5, 2.0, 6)
    r1, s1 = equilibrate(a)
    r2, s2 = equilibrate(d[:, None] * a)
    m1 = r1[:, None] * a * s1[None, :]
    m2 = r2[:, None] * (d[:, None] * a) * s2[None, :]
    assert np.allclose(m1, m2, rtol=1e-13)


def test_equilibrate_zero_row():
    with pytest.raises(ZeroRowOrColumn):
        equilibrate(np.array([[0.0, 0.0], [1.0, 1.0]]))


def test_scale_round_basic():
    rng = np.random.default_rng(9)
    a = rng.uniform(-1, 1, (10, 10))
    ones = np.ones(10)
    sh = scale_round(a, ones, ones, 0.1, FP16)
    beta = np.abs(a).max()
    assert sh.mu == 0.1 * 65504.0 / beta
    assert abs(np.abs(sh.a_h).max() - 6550.4) <= 4.0   # within a fp16 ulp at that scale
    assert np.isfinite(sh.a_h).all()


def test_scale_round_extreme_range():
    a = np.array([[1e8, 1.0], [1e-8, 1.0]])
    assert np.isinf(round_array(a, FP16)).any()
    r, s = equilibrate(a)
    sh = scale_round(a, r, s, 0.1, FP16)
    assert np.isfinite(sh.a_h).all()


def test_scale_round_theta_one():
    sh = scale_round(np.array([[1.0]]), np.ones(1), np.ones(1), 1.0, FP16)
    assert sh.a_h[0, 0] == FP16.x_max


def test_scale_round_never_overflows():
    rng = np.random.default_rng(10)
    for _ in range(20):
        a = rng.uniform(-1, 1, (8, 8)) * 10.0 ** rng.integers(-6, 6)
        sh = scale_round(a, np.ones(8), np.ones(8), 1.0, FP16)
        assert np.isfinite(sh.a_h).all()


def test_scale_round_zero_matrix():
    with pytest.raises(ZeroMatrix):
        scale_round(np.zeros((2, 2)), np.ones(2), np.ones(2), 0.5, FP16)


# -- chol_half -----------------------------------------------------------------

def test_chol_half_identity():
    res = chol_half(np.eye(10), theta=0.1, c0=1, fmt=FP16)
    assert res.c_final == 1
    expected = math.sqrt(res.mu * (1.0 + FP16.u))
    diag = np.diag(res.r_factor)
    assert np.all(np.abs(diag - expected) <= 2 * FP16.u * expected)


def test_chol_half_rescues_indefinite_rounding():
    rng = np.random.default_rng(11)
    rescued = 0
    for _ in range(5):
        a = spd_with_spread(30, 1e-6, 1.0, rng)
        d = np.sqrt(np.diag(a))
        h = a / np.outer(d, d)
        np.fill_diagonal(h, 1.0)
        mu = 0.1 * FP16.x_max
        try:
            chol_emulated(round_array(mu * h, FP16), FP16)
        except NotPositiveDefinite:
            res = chol_half(a, theta=0.1, c0=1, fmt=FP16)
            assert res.c_final >= 1
            assert np.isfinite(res.r_factor).all()
            rescued += 1
    assert rescued >= 3   # construction makes direct rounding fail most times


def test_chol_half_output_contract():
    rng = np.random.default_rng(12)
    n = 40
    a = random_spd(n, rng)
    res = chol_half(a, theta=0.1, c0=2, fmt=FP16)
    d = np.sqrt(np.diag(a))
    h = a / np.outer(d, d)
    np.fill_diagonal(h, 1.0)
    g = h + res.c_final * FP16.u * np.eye(n)
    target = round_array(res.mu * g, FP16)
    err = np.abs(res.r_factor.T @ res.r_factor - target).max() / np.abs(res.mu * g).max()
    assert err <= 50 * n * FP16.u


def test_chol_half_c_is_first_success():
    rng = np.random.default_rng(13)
    a = spd_with_spread(20, 1e-7, 1.0, rng)
    res = chol_half(a, theta=0.1, c0=1, fmt=FP16)
    c = res.c_final
    if c > 1:
        # the previous power of two must have failed
        d = np.sqrt(np.diag(a))
        h = a / np.outer(d, d)
        np.fill_diagonal(h, 1.0)
        cprev = c // 2
        g = h + cprev * FP16.u * np.eye(20)
        mu = 0.1 * FP16.x_max / (1.0 + cprev * FP16.u)
        with pytest.raises(NotPositiveDefinite):
            chol_emulated(round_array(mu * g, FP16), FP16)


def test_chol_half_nonpositive_diagonal():
    with pytest.raises(NonpositiveDiagonal):
        chol_half(np.diag([1.0, -2.0]), fmt=FP16)
