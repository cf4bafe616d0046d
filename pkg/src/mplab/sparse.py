"""Sparse kernels: CSR storage, emulated-precision SpMV, clustered lossy
value compression, the adaptive-precision block-Jacobi preconditioner,
and a PCG driver.

The compression scheme stores each nonzero as an 8-bit cluster id plus a
residual against the cluster center, with a per-cluster storage format
chosen as the coarsest rung of {fp16, fp32, fp64} meeting the requested
reconstruction tolerance. The block-Jacobi preconditioner likewise
stores each inverted diagonal block in the coarsest format that keeps
its range and a round-trip accuracy target, while every application runs
in full binary64, so the preconditioner stays a constant operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteDetected, NotConverged, SingularBlock
from .prec import FP16, FP32, FP64, Format, Rng, round_array
from .dense import FmtOps

__all__ = [
    "CsrMatrix",
    "ClusteredCsr",
    "BlockJacobiPrecond",
    "spmv",
    "kmeans1d",
    "compress_clustered",
    "spmv_clustered",
    "footprint_bits",
    "block_jacobi_build",
    "block_jacobi_apply",
    "pcg",
]

DEFAULT_LADDER = (FP16, FP32, FP64)


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix with binary64 values."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.values):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(self.col_indices) != len(self.values):
            raise ValueError("col_indices and values must have equal length")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValueError("column index out of range")
        for i in range(self.n_rows):
            cols = self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]
            if cols.size > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"columns not strictly increasing in row {i}")
        if not np.isfinite(self.values).all():
            raise ValueError("values must be finite")

    @property
    def nnz(self) -> int:
        return int(len(self.values))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, sum_duplicates: bool = True):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        n_rows, n_cols = shape
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if sum_duplicates and len(rows):
            key_change = np.concatenate([[True], (np.diff(rows) != 0) | (np.diff(cols) != 0)])
            group = np.cumsum(key_change) - 1
            vals = np.bincount(group, weights=vals)
            rows = rows[key_change]
            cols = cols[key_change]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def from_dense(cls, a, tol: float = 0.0):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(np.abs(a) > tol)
        return cls.from_coo(rows, cols, a[rows, cols], a.shape, sum_duplicates=False)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        for i in range(self.n_rows):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            out[i, self.col_indices[lo:hi]] = self.values[lo:hi]
        return out

    def row_of_nonzero(self) -> np.ndarray:
        """Row index of each stored nonzero."""
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def matvec(self, x) -> np.ndarray:
        """Binary64 product (fast path; accumulation order unspecified)."""
        x = np.asarray(x, dtype=np.float64)
        prods = self.values * x[self.col_indices]
        return np.bincount(self.row_of_nonzero(), weights=prods, minlength=self.n_rows)

    def norm_inf(self) -> float:
        if self.nnz == 0:
            return 0.0
        sums = np.bincount(self.row_of_nonzero(), weights=np.abs(self.values),
                           minlength=self.n_rows)
        return float(sums.max())


def spmv(a: CsrMatrix, x, fmt: Format, rng: Rng | None = None) -> np.ndarray:
    """y = A x with one rounding per multiply and per add in ``fmt``.

    Accumulation is strictly left to right within each row, so fp64
    output is bitwise reproducible against a sequential dense product.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.n_cols,):
        raise ValueError(f"x has shape {x.shape}, expected ({a.n_cols},)")
    native64 = fmt.exp_bits == 11 and fmt.sig_bits == 52
    if native64:
        prods = a.values * x[a.col_indices]
    else:
        ops = FmtOps(fmt, rng)
        prods = ops.finish(ops.mul(ops.prep(a.values), ops.prep(x)[a.col_indices]))
    y = np.zeros(a.n_rows)
    offsets = a.row_offsets
    if native64:
        for i in range(a.n_rows):
            s = 0.0
            for k in range(offsets[i], offsets[i + 1]):
                s += prods[k]
            y[i] = s
    else:
        ops = FmtOps(fmt, rng)
        pl = ops.prep(prods)
        for i in range(a.n_rows):
            s = ops.prep(np.float64(0.0))
            for k in range(offsets[i], offsets[i + 1]):
                s = ops.add(s, pl[k])
            y[i] = float(s)
    return y


def kmeans1d(values, k: int, max_iters: int = 100, rng: Rng | None = None) -> np.ndarray:
    """Lloyd iterations on scalars with k-means++ style seeding.

    Returns sorted centers. If there are fewer than k distinct values the
    distinct values themselves are returned (degenerate input). Ties in
    the nearest-center assignment go to the lower index.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if not (1 <= k <= 256):
        raise ValueError("k must be in [1, 256]")
    if rng is None:
        raise ValueError("rng is required for seeding")
    distinct = np.unique(values)
    if len(distinct) <= k:
        return distinct

    # k-means++ seeding on the distinct values
    centers = [distinct[rng.integers(0, len(distinct))]]
    d2 = (distinct - centers[0]) ** 2
    for _ in range(k - 1):
        total = d2.sum()
        if total == 0:
            break
        probs = d2 / total
        centers.append(distinct[rng.choice(len(distinct), p=probs)])
        d2 = np.minimum(d2, (distinct - centers[-1]) ** 2)
    centers = np.sort(np.array(centers))

    for _ in range(max_iters):
        ids = assign_nearest(values, centers)
        counts = np.bincount(ids, minlength=len(centers))
        sums = np.bincount(ids, weights=values, minlength=len(centers))
        new_centers = np.where(counts > 0, sums / np.maximum(counts, 1), centers)
        new_centers = np.sort(new_centers)
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers
    return centers


def assign_nearest(values, centers) -> np.ndarray:
    """Nearest sorted center per value; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) == 1:
        return np.zeros(values.shape, dtype=np.int64)
    mids = (centers[:-1] + centers[1:]) / 2.0
    return np.searchsorted(mids, values, side="left")


@dataclass
class ClusteredCsr:
    """Lossy-compressed CSR: values become center[id] + residual, where
    each cluster's residuals are stored in their own format."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    centers: np.ndarray
    ids: np.ndarray                 # uint8 cluster id per nonzero
    residual_fmts: list             # Format per cluster
    residuals: np.ndarray           # binary64, representable in cluster fmt

    @property
    def nnz(self) -> int:
        return int(len(self.ids))

    def reconstructed_values(self) -> np.ndarray:
        return self.centers[self.ids] + self.residuals

    def to_csr(self) -> CsrMatrix:
        return CsrMatrix(self.n_rows, self.n_cols, self.row_offsets,
                         self.col_indices, self.reconstructed_values())


def _exactish_residual(vals, centers, ids):
    """Residuals r with center + r == value wherever binary64 allows it.

    One compensation pass fixes the cases where fl(v - c) alone does not
    round-trip; exactness is guaranteed when values sit within a factor
    of two of their center (Sterbenz), which holds for clusters that are
    tight relative to the value magnitudes.
    """
    c = centers[ids]
    r = vals - c
    back = c + r
    bad = back != vals
    if bad.any():
        r = np.where(bad, r + (vals - back), r)
    return r


def compress_clustered(a: CsrMatrix, k: int, tau: float, rng: Rng,
                       residual_fmt: Format | None = None,
                       ladder=DEFAULT_LADDER) -> ClusteredCsr:
    """Cluster the values and store 8-bit ids plus per-cluster residuals.

    Each cluster gets the coarsest ladder format whose rounded residuals
    reconstruct every member to within tau * max(|v|, v_floor), with
    v_floor = tau * max|values| guarding the near-zero entries. tau = 0
    demands exact reconstruction, which forces the binary64 rung.
    ``residual_fmt`` overrides the selection for every cluster.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if k > 256:
        raise ValueError("k must be <= 256 (8-bit cluster ids)")
    centers = kmeans1d(a.values, k, rng=rng)
    ids = assign_nearest(a.values, centers)
    res = _exactish_residual(a.values, centers, ids)

    vmax = float(np.abs(a.values).max()) if a.nnz else 0.0
    v_floor = tau * vmax
    tol = tau * np.maximum(np.abs(a.values), v_floor)

    fmts = []
    stored = np.array(res)
    for ci in range(len(centers)):
        members = ids == ci
        if not members.any():
            fmts.append(FP64)
            continue
        chosen = None
        candidates = [residual_fmt] if residual_fmt is not None else list(ladder)
        for fmt in candidates:
            rr = round_array(res[members], fmt)
            recon = centers[ci] + rr
            if np.all(np.abs(recon - a.values[members]) <= tol[members]) or fmt is candidates[-1]:
                chosen = fmt
                stored[members] = rr
                break
        fmts.append(chosen)
    return ClusteredCsr(a.n_rows, a.n_cols, a.row_offsets, a.col_indices,
                        centers, ids.astype(np.uint8), fmts, stored)


def spmv_clustered(m: ClusteredCsr, x) -> np.ndarray:
    """Binary64 SpMV over the reconstructed values; bitwise identical to
    spmv(reconstructed matrix, x, fp64)."""
    return spmv(m.to_csr(), x, FP64)


def footprint_bits(m: ClusteredCsr):
    """Analytic storage cost of the compressed values.

    8 bits per cluster id, (1 + exp_bits + sig_bits) per residual, 64
    per center; returns (mean bits per nonzero, total bits). Index
    structure (row offsets, column ids) is common to any CSR and not
    counted.
    """
    fmt_bits = np.array([1 + f.exp_bits + f.sig_bits for f in m.residual_fmts])
    total = 8 * m.nnz + int(fmt_bits[m.ids].sum()) + 64 * len(m.centers)
    per_value = total / m.nnz if m.nnz else 0.0
    return per_value, total


@dataclass
class BlockJacobiPrecond:
    """Inverted diagonal blocks with per-block storage formats.

    Entries are stored already rounded into their block's format but
    applied in binary64, so applications are bitwise repeatable and the
    operator never changes between iterations.
    """

    block_ranges: list
    inv_blocks: list
    block_fmts: list
    fallback_blocks: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.block_ranges[-1][1] if self.block_ranges else 0


def _diag_block(a: CsrMatrix, lo: int, hi: int) -> np.ndarray:
    out = np.zeros((hi - lo, hi - lo))
    for i in range(lo, hi):
        s, e = a.row_offsets[i], a.row_offsets[i + 1]
        cols = a.col_indices[s:e]
        sel = (cols >= lo) & (cols < hi)
        out[i - lo, cols[sel] - lo] = a.values[s:e][sel]
    return out


def block_jacobi_build(a: CsrMatrix, block_size: int, digit_tau: float = 0.1,
                       ladder=DEFAULT_LADDER) -> BlockJacobiPrecond:
    """Invert contiguous diagonal blocks in binary64 and store each in
    the coarsest format that is finite, keeps every row nonzero, and
    round-trips to digit_tau relative Frobenius accuracy.

    digit_tau = 0.1 preserves one decimal digit of each inverted block.
    Singular blocks fall back to the identity with a warning tag.
    """
    if a.n_rows != a.n_cols:
        raise ValueError("matrix must be square")
    if not (1 <= block_size <= 32):
        raise ValueError("block_size must be in [1, 32]")
    ranges = [(lo, min(lo + block_size, a.n_rows)) for lo in range(0, a.n_rows, block_size)]
    inv_blocks, fmts, fallbacks = [], [], []
    for bi, (lo, hi) in enumerate(ranges):
        blk = _diag_block(a, lo, hi)
        try:
            inv = np.linalg.inv(blk)
            if not np.isfinite(inv).all():
                raise np.linalg.LinAlgError("nonfinite inverse")
        except np.linalg.LinAlgError:
            warnings.warn(f"singular diagonal block {bi} ({lo}:{hi}); using identity",
                          RuntimeWarning, stacklevel=2)
            inv_blocks.append(np.eye(hi - lo))
            fmts.append(FP64)
            fallbacks.append(bi)
            continue
        norm = np.linalg.norm(inv, "fro")
        chosen = None
        for fmt in ladder:
            rounded = round_array(inv, fmt)
            if not np.isfinite(rounded).all():
                continue
            if np.any(~np.any(rounded != 0.0, axis=1)):
                continue   # a row underflowed away entirely
            if np.linalg.norm(rounded - inv, "fro") <= digit_tau * norm:
                chosen = (fmt, rounded)
                break
        if chosen is None:
            chosen = (FP64, inv)
        fmts.append(chosen[0])
        inv_blocks.append(chosen[1])
    return BlockJacobiPrecond(block_ranges=ranges, inv_blocks=inv_blocks,
                              block_fmts=fmts, fallback_blocks=fallbacks)


def block_jacobi_apply(p: BlockJacobiPrecond, v) -> np.ndarray:
    """Apply the stored (rounded) blocks in binary64."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    for (lo, hi), blk in zip(p.block_ranges, p.inv_blocks):
        out[lo:hi] = blk @ v[lo:hi]
    return out


def pcg(a: CsrMatrix, b, precond: BlockJacobiPrecond | None = None,
        tol: float = 1e-10, maxit: int = 1000):
    """Preconditioned conjugate gradients in binary64.

    Stops when the true residual satisfies |b - Ax|_2 <= tol*|b|_2.
    Raises NotConverged past maxit and IndefiniteDetected on p^T A p <= 0.
    """
    b = np.asarray(b, dtype=np.float64)
    n = a.n_rows
    if b.shape != (n,):
        raise ValueError("rhs shape mismatch")
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return np.zeros(n), 0, []

    apply_m = (lambda v: block_jacobi_apply(precond, v)) if precond is not None else (lambda v: v)
    x = np.zeros(n)
    r = b.copy()
    z = apply_m(r)
    p = z.copy()
    rz = float(r @ z)
    history = []
    for it in range(1, maxit + 1):
        ap = spmv(a, p, FP64)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefiniteDetected(f"p^T A p = {pap} at iteration {it}")
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        true_res = float(np.linalg.norm(b - spmv(a, x, FP64)))
        history.append(true_res)
        if true_res <= tol * norm_b:
            return x, it, history
        z = apply_m(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NotConverged(maxit, history)
