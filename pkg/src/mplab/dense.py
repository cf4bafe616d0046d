"""Dense kernels in emulated precision, plus scaling/shifting preparation.

Matrices are plain float64 numpy arrays (row-major); low-precision
behavior comes from pushing every elementary operation through the
format's rounding. When a format maps onto a hardware IEEE dtype
(binary16/32/64, round to nearest) the kernels run natively in that
dtype, which is bit-equivalent to per-op rounding.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    ExactZeroPivot,
    NonpositiveDiagonal,
    NotPositiveDefinite,
    OverflowInFactor,
    RetryCapExceeded,
    ZeroDiagonal,
    ZeroMatrix,
    ZeroRowOrColumn,
)
from .prec import Format, Rng, native_dtype, round_array

__all__ = [
    "ScaledHalf",
    "CholHalfResult",
    "gemm_emulated",
    "lu_emulated",
    "chol_emulated",
    "tri_solve_emulated",
    "equilibrate",
    "scale_round",
    "chol_half",
    "flop_counts",
    "reset_flop_counts",
]

# Lightweight instrumentation: kernels add their arithmetic volume here so
# tests can assert cost contracts without profiling.
flop_counts = Counter()


def reset_flop_counts():
    flop_counts.clear()


class FmtOps:
    """Elementwise arithmetic with one rounding per operation in ``fmt``.

    Emulated path: float64 arrays, explicit rounding after each op.
    Native path: arrays carried in the matching IEEE dtype, numpy ops
    round once per operation by construction.
    """

    def __init__(self, fmt: Format, rng: Rng | None = None):
        self.fmt = fmt
        self.rng = rng
        self.dtype = native_dtype(fmt)

    def prep(self, a):
        a = np.asarray(a, dtype=np.float64)
        if self.dtype is not None:
            with np.errstate(over="ignore"):
                return a.astype(self.dtype)
        return round_array(a, self.fmt, self.rng)

    def finish(self, a):
        return np.asarray(a, dtype=np.float64)

    def _r(self, x):
        if self.dtype is not None:
            return x
        return round_array(x, self.fmt, self.rng)

    def add(self, a, b):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._r(np.add(a, b))

    def sub(self, a, b):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._r(np.subtract(a, b))

    def mul(self, a, b):
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            return self._r(np.multiply(a, b))

    def div(self, a, b):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
            return self._r(np.divide(a, b))

    def sqrt(self, a):
        with np.errstate(invalid="ignore"):
            return self._r(np.sqrt(a))

    def dot(self, u, v):
        """Sequential dot product, one rounding per multiply and add."""
        if self.dtype == np.float64:
            return np.float64(np.dot(u, v))
        p = self.mul(u, v)
        s = p.dtype.type(0.0) if self.dtype is not None else 0.0
        for x in p:
            s = self.add(s, x)
        return s


def _as_square(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a


def gemm_emulated(a, b, c=None, alpha: float = 1.0, beta: float = 0.0,
                  in_fmt: Format = None, acc_fmt: Format = None,
                  rng: Rng | None = None) -> np.ndarray:
    """alpha*a@b + beta*c with inputs rounded to ``in_fmt`` and every
    multiply/accumulate rounded in ``acc_fmt``.

    acc_fmt == in_fmt emulates a plain low-precision GEMM; a wider
    acc_fmt emulates low-in/high-accumulate units.
    """
    if in_fmt is None or acc_fmt is None:
        raise ValueError("in_fmt and acc_fmt are required")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    m, k, n = a.shape[0], a.shape[1], b.shape[1]
    flop_counts["gemm"] += 2 * m * n * k

    ain = FmtOps(in_fmt, rng)
    acc = FmtOps(acc_fmt, rng)
    al = acc.prep(ain.finish(ain.prep(a)))
    bl = acc.prep(ain.finish(ain.prep(b)))

    out = acc.prep(np.zeros((m, n)))
    for kk in range(k):
        p = acc.mul(al[:, kk, None], bl[None, kk, :])
        out = acc.add(out, p)
    out = acc.mul(out, acc.prep(np.float64(alpha)))
    if c is not None and beta != 0.0:
        cterm = acc.mul(acc.prep(np.asarray(c, dtype=np.float64)), acc.prep(np.float64(beta)))
        out = acc.add(out, cterm)
    return acc.finish(out)


def lu_emulated(a, fmt: Format, rng: Rng | None = None):
    """Right-looking LU with partial pivoting, all arithmetic in ``fmt``.

    Returns (perm, l, u) with a[perm] ~= l @ u; perm holds the row order.
    Ties in the pivot search go to the smallest row index.
    """
    a = _as_square(a)
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")
    n = a.shape[0]
    flop_counts["lu"] += 2 * n ** 3 // 3

    ops = FmtOps(fmt, rng)
    m = ops.prep(a)
    perm = np.arange(n)
    for i in range(n):
        col = np.abs(np.asarray(m[i:, i], dtype=np.float64))
        p = i + int(np.argmax(col))
        if m[p, i] == 0:
            raise ExactZeroPivot(i)
        if p != i:
            m[[i, p]] = m[[p, i]]
            perm[[i, p]] = perm[[p, i]]
        if i + 1 < n:
            lcol = ops.div(m[i + 1:, i], m[i, i])
            m[i + 1:, i] = lcol
            upd = ops.mul(lcol[:, None], m[i, i + 1:][None, :])
            m[i + 1:, i + 1:] = ops.sub(m[i + 1:, i + 1:], upd)
    md = ops.finish(m)
    if not np.isfinite(md).all():
        raise OverflowInFactor("infinity appeared during LU; scale the matrix first")
    l = np.tril(md, -1) + np.eye(n)
    u = np.triu(md)
    return perm, l, u


def chol_emulated(a, fmt: Format, rng: Rng | None = None) -> np.ndarray:
    """Upper-triangular r with r.T @ r ~= a, arithmetic in ``fmt``.

    The input is symmetrized as (a + a.T)/2 in binary64 first. Raises
    NotPositiveDefinite (with the failing pivot index) when a computed
    diagonal pivot is <= 0 or nonfinite.
    """
    a = _as_square(a)
    a = (a + a.T) / 2.0
    n = a.shape[0]
    flop_counts["chol"] += n ** 3 // 3

    ops = FmtOps(fmt, rng)
    m = ops.prep(a)
    for i in range(n):
        d = float(m[i, i])
        if not (d > 0.0) or not np.isfinite(d):
            raise NotPositiveDefinite(i, pivot=d)
        rii = ops.sqrt(m[i, i])
        m[i, i] = rii
        if i + 1 < n:
            row = ops.div(m[i, i + 1:], rii)
            m[i, i + 1:] = row
            upd = ops.mul(row[:, None], row[None, :])
            m[i + 1:, i + 1:] = ops.sub(m[i + 1:, i + 1:], upd)
    return np.triu(ops.finish(m))


def tri_solve_emulated(t, b, side: str, unit_diag: bool = False,
                       fmt: Format = None, rng: Rng | None = None) -> np.ndarray:
    """Column-oriented forward/backward substitution in ``fmt``.

    ``side`` is "lower" or "upper" for the triangle of ``t`` to use.
    """
    if fmt is None:
        raise ValueError("fmt is required")
    t = _as_square(t)
    b = np.asarray(b, dtype=np.float64)
    n = t.shape[0]
    if b.shape != (n,):
        raise ValueError(f"rhs shape {b.shape} does not match matrix size {n}")
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    flop_counts["tri_solve"] += n * n

    ops = FmtOps(fmt, rng)
    tm = ops.prep(t)
    x = ops.prep(b).copy()
    order = range(n) if side == "lower" else range(n - 1, -1, -1)
    for j in order:
        if not unit_diag:
            if tm[j, j] == 0:
                raise ZeroDiagonal(j)
            x[j] = ops.div(x[j], tm[j, j])
        if side == "lower" and j + 1 < n:
            x[j + 1:] = ops.sub(x[j + 1:], ops.mul(tm[j + 1:, j], x[j]))
        elif side == "upper" and j > 0:
            x[:j] = ops.sub(x[:j], ops.mul(tm[:j, j], x[j]))
    return ops.finish(x)


def equilibrate(a):
    """Row-then-column equilibration scalings (binary64).

    r_i = 1/max_j |a_ij|, then s_j = 1/max_i |r_i a_ij|; afterwards every
    column of diag(r) a diag(s) has max modulus exactly 1 and every row
    at most 1.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    row_max = np.abs(a).max(axis=1)
    if (row_max == 0).any():
        raise ZeroRowOrColumn("zero row")
    r = 1.0 / row_max
    col_max = np.abs(r[:, None] * a).max(axis=0)
    if (col_max == 0).any():
        raise ZeroRowOrColumn("zero column")
    s = 1.0 / col_max
    return r, s


@dataclass
class ScaledHalf:
    """A matrix scaled into a narrow-range format: a_h ~= round(mu*R*A*S)."""

    a_h: np.ndarray
    mu: float
    r_scale: np.ndarray
    s_scale: np.ndarray
    fmt: Format


def scale_round(a, r_scale, s_scale, theta: float, fmt: Format,
                rng: Rng | None = None) -> ScaledHalf:
    """Two-sided diagonal scaling then rounding into ``fmt``.

    beta = max |(R a S)_ij|, mu = theta * x_max / beta, and the result is
    round(mu * R a S) entrywise; theta in (0, 1] keeps every entry at or
    below theta*x_max so no entry overflows.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must be in (0, 1]")
    a = np.asarray(a, dtype=np.float64)
    r_scale = np.asarray(r_scale, dtype=np.float64)
    s_scale = np.asarray(s_scale, dtype=np.float64)
    scaled = (r_scale[:, None] * a) * s_scale[None, :]
    beta = np.abs(scaled).max()
    if beta == 0.0:
        raise ZeroMatrix("cannot scale an all-zero matrix")
    mu = theta * fmt.x_max / beta
    a_h = round_array(mu * scaled, fmt, rng)
    return ScaledHalf(a_h=a_h, mu=mu, r_scale=r_scale, s_scale=s_scale, fmt=fmt)


@dataclass
class CholHalfResult:
    """Shifted low-precision Cholesky: r.T r ~= round(mu*(H + c*u*I))."""

    r_factor: np.ndarray
    d_scale: np.ndarray
    mu: float
    c_final: int
    fmt: Format


MAX_SHIFT_DOUBLINGS = 20


def chol_half(a, theta: float = 0.1, c0: int = 2, fmt: Format = None,
              rng: Rng | None = None) -> CholHalfResult:
    """Low-precision Cholesky with diagonal scaling and shifting.

    Scales to H = D^-1 A D^-1 with D = diag(a_ii^(1/2)) and unit diagonal
    set exactly, shifts by c*u*I, scales by mu = theta*x_max/(1 + c*u),
    rounds to ``fmt`` and attempts the factorization; on failure the
    shift multiplier doubles, up to MAX_SHIFT_DOUBLINGS times.
    """
    if fmt is None:
        raise ValueError("fmt is required")
    if c0 < 1:
        raise ValueError("c0 must be >= 1")
    a = _as_square(a)
    a = (a + a.T) / 2.0
    diag = np.diag(a)
    bad = np.nonzero(~(diag > 0.0))[0]
    if bad.size:
        raise NonpositiveDiagonal(int(bad[0]))
    d = np.sqrt(diag)
    h = a / np.outer(d, d)
    np.fill_diagonal(h, 1.0)   # h_ii is 1 by construction, set it exactly

    uh = fmt.u
    c = int(c0)
    for _ in range(MAX_SHIFT_DOUBLINGS + 1):
        g = h + (c * uh) * np.eye(a.shape[0])
        beta = 1.0 + c * uh
        mu = theta * fmt.x_max / beta
        a_h = round_array(mu * g, fmt, rng)
        try:
            r = chol_emulated(a_h, fmt, rng)
        except NotPositiveDefinite:
            c *= 2
            continue
        return CholHalfResult(r_factor=r, d_scale=d, mu=mu, c_final=c, fmt=fmt)
    raise RetryCapExceeded(c)
