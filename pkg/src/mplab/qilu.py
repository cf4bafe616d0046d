"""Quantized integer LU factorization with partial pivoting.

Values live in the fixed-point representation R(i) = i / 2^32 with i a
32-bit signed integer; the input matrix is pre-normalized into
[-2^-r, 2^-r] by a global scale m, so the factorization runs entirely
in integer arithmetic. Addition is integer addition; multiplication
keeps the high 32 bits of the 64-bit product (one instruction on most
ISAs, ``mulhi32`` here).

The unit-lower multipliers can reach magnitude 1, i.e. 2^32 in the
fixed-point scale, which needs 33 bits; they are carried in 64-bit
integers during the factorization. The int32 range is enforced on the
trailing-update results, which is where uncontrolled growth shows up,
and a violation is reported as a typed Overflowed failure rather than a
silently wrong factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Overflowed, ZeroMatrix, ZeroPivot

__all__ = ["FixedPointMatrix", "mulhi32", "to_fixed", "qilu_factor"]

INT32_MAX = 2 ** 31 - 1
SCALE_BITS = 32
SCALE = 2 ** SCALE_BITS


def mulhi32(i: int, j: int) -> int:
    """High word of the 64-bit product: (i * j) >> 32, floor semantics."""
    return (int(i) * int(j)) >> SCALE_BITS


@dataclass
class FixedPointMatrix:
    """int32 entries with R(i) = i/2^32; original value ~= m * R(i)."""

    n: int
    data: np.ndarray          # int32, shape (n, n)
    scale_m: float
    range_r: int

    def to_doubles(self) -> np.ndarray:
        """Normalized values R(i), exactly representable in binary64."""
        return self.data.astype(np.float64) / SCALE


def to_fixed(a, r: int) -> FixedPointMatrix:
    """Quantize ``a`` into the fixed-point representation.

    m = max|a| * 2^r normalizes entries into [-2^-r, 2^-r]; each is then
    rounded to the nearest multiple of 2^-32 and clamped to the int32
    range. With r = 0 the extreme entries map to 2^32 and clamp, so
    r >= 1 is recommended.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if r < 0:
        raise ValueError("r must be >= 0")
    amax = float(np.abs(a).max())
    if amax == 0.0:
        raise ZeroMatrix("cannot quantize an all-zero matrix")
    m = amax * float(2 ** r)           # power-of-two multiple, exact
    scaled = np.rint((a / m) * SCALE)
    ints = np.clip(scaled, -INT32_MAX, INT32_MAX).astype(np.int64).astype(np.int32)
    return FixedPointMatrix(n=a.shape[0], data=ints, scale_m=m, range_r=r)


def qilu_factor(a, r: int):
    """Integer LU with partial pivoting of the normalized matrix.

    Returns (perm, l, u, m) with (a/m)[perm] ~= l @ u, all recovered as
    binary64 from the integer factors. Raises Overflowed when a trailing
    update leaves the int32 range and ZeroPivot on an exactly singular
    column. Bit-deterministic: identical inputs give identical factors.

    The per-column scale alpha = 2^32 / pivot_value is itself a
    fixed-point number, 2^64 // pivot_int, computed with one 64-bit
    division per column; the column scaling (alpha * a) >> 32 is then a
    fixed-point multiply, evaluated exactly via a 32-bit split so no
    intermediate exceeds 64 bits.
    """
    fx = to_fixed(a, r)
    n = fx.n
    w = fx.data.astype(np.int64)
    perm = np.arange(n)
    for i in range(n):
        col = np.abs(w[i:, i])
        p = i + int(np.argmax(col))
        if w[p, i] == 0:
            raise ZeroPivot(i)
        if p != i:
            w[[i, p]] = w[[p, i]]
            perm[[i, p]] = perm[[p, i]]
        piv = int(w[i, i])
        # alpha = 2^64 // piv, truncated toward zero
        alpha = (1 << 2 * SCALE_BITS) // abs(piv)
        if piv < 0:
            alpha = -alpha
        if abs(alpha) > 2 ** 63 - 1:
            raise Overflowed(i)   # pivot too small for the 64-bit reciprocal
        if i + 1 < n:
            # multipliers (alpha * a) >> 32 represent l = a/piv with
            # |l| <= 1 (up to 33 bits, kept in int64). Exact split:
            # (alpha*a) >> 32 == ah*a + ((al*a) >> 32) with al in [0, 2^32).
            ah = alpha >> SCALE_BITS
            al = alpha - (ah << SCALE_BITS)
            sub = w[i + 1:, i]
            w[i + 1:, i] = ah * sub + ((al * sub) >> SCALE_BITS)
            prod = (w[i + 1:, i][:, None] * w[i, i + 1:][None, :]) >> SCALE_BITS
            w[i + 1:, i + 1:] -= prod
            if np.abs(w[i + 1:, i + 1:]).max(initial=0) > INT32_MAX:
                raise Overflowed(i)
    vals = w.astype(np.float64) / SCALE    # exact: |w| <= 2^32, /2^32 exact
    l = np.tril(vals, -1) + np.eye(n)
    u = np.triu(vals)
    return perm, l, u, fx.scale_m
