"""Synthetic matrix families for the experiment harness.

uniform: dense i.i.d. uniform(-1, 1) entries (square or rectangular).
randsvd: U diag(sigma) V^T with random orthogonal factors and
         geometrically spaced singular values hitting a target kappa.
laplacian2d: 5-point stencil on an n-by-n grid (CSR, SPD).
spd-shifted: M^T M + n I for uniform M (dense, SPD).

Everything is deterministic given the generator's rng.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prec import Rng
from .sparse import CsrMatrix

__all__ = ["MatrixGenerator", "generate", "FAMILIES"]

FAMILIES = ("uniform", "randsvd", "laplacian2d", "spd-shifted")


@dataclass
class MatrixGenerator:
    family: str
    n: int
    m: int | None = None          # rows, for rectangular families
    kappa: float | None = None    # randsvd target 2-norm condition number
    density: float | None = None  # sparse uniform density

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kappa is not None and self.kappa < 1:
            raise ValueError("kappa must be >= 1")


def generate(gen: MatrixGenerator, rng: Rng):
    """Build one instance; dense families return ndarrays, sparse CSR."""
    n = gen.n
    if gen.family == "uniform":
        rows = gen.m if gen.m is not None else n
        a = rng.uniform(-1.0, 1.0, (rows, n))
        if gen.density is not None:
            mask = rng.uniform(size=a.shape) < gen.density
            np.fill_diagonal(mask, True)
            return CsrMatrix.from_dense(np.where(mask, a, 0.0))
        return a
    if gen.family == "randsvd":
        kappa = gen.kappa if gen.kappa is not None else 1e2
        rows = gen.m if gen.m is not None else n
        q1, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
        q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
        sigma = np.geomspace(1.0, 1.0 / kappa, n)
        return (q1[:, :n] * sigma) @ q2.T
    if gen.family == "laplacian2d":
        g = n
        rows, cols, vals = [], [], []
        for i in range(g):
            for j in range(g):
                k = i * g + j
                rows.append(k)
                cols.append(k)
                vals.append(4.0)
                for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < g and 0 <= jj < g:
                        rows.append(k)
                        cols.append(ii * g + jj)
                        vals.append(-1.0)
        return CsrMatrix.from_coo(rows, cols, vals, (g * g, g * g))
    # spd-shifted
    m = rng.uniform(-1.0, 1.0, (n, n))
    return m.T @ m + n * np.eye(n)
