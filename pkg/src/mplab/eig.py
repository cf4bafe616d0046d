"""Symmetric eigenpair refinement.

A cyclic Jacobi solver in emulated precision supplies approximate
eigenpairs; one block refinement step then contracts the residual of the
whole spectrum (clusters handled by a norm-based switch), and a
single-pair sharpener refines one eigenpair through column-replaced
linear solves. Refinement arithmetic is binary64, so the attainable
residual floor is around n*u(fp64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import FmtOps
from .errors import NoConvergence, SingularB
from .prec import FP64, Format, Rng

__all__ = ["EigenPairs", "RefineStep", "jacobi_eig", "refine_syev", "sice_refine"]


@dataclass
class EigenPairs:
    """Approximate eigenvectors (columns of x) and eigenvalues."""

    x: np.ndarray
    lam: np.ndarray
    fmt: Format


@dataclass
class RefineStep:
    """One refinement application: the update matrix, the cluster
    threshold omega, and the per-pair residuals after the update."""

    e: np.ndarray
    omega: float
    residuals: np.ndarray


MAX_SWEEPS = 30


def jacobi_eig(a, fmt: Format, tol: float = 1e-12, rng: Rng | None = None) -> EigenPairs:
    """Cyclic Jacobi eigensolver with all arithmetic in ``fmt``.

    Sweeps until the off-diagonal Frobenius mass falls below
    tol * |a|_F (measured in binary64). Raises NoConvergence at the
    sweep cap, or earlier when the mass stalls above the target on the
    format's rounding plateau; pick tol above the plateau (around
    n*u(fmt)) for low-precision runs. Returns pairs sorted by ascending
    eigenvalue.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    a = (a + a.T) / 2.0

    ops = FmtOps(fmt, rng)
    m = ops.prep(a)
    v = ops.prep(np.eye(n))
    norm_a = np.linalg.norm(a, "fro")

    def offmass():
        md = np.asarray(m, dtype=np.float64)
        return np.linalg.norm(md - np.diag(np.diag(md)), "fro")

    prev_off = np.inf
    for sweep in range(MAX_SWEEPS):
        off = offmass()
        if off <= tol * norm_a:
            break
        if off >= prev_off * 0.5 and sweep >= 3:
            # rounding plateau of the format: no further progress possible
            raise NoConvergence(
                f"off-diagonal mass stalled at {off:.3e} (target {tol * norm_a:.3e})")
        prev_off = off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0:
                    continue
                # stable rotation: t = sign(tau)/(|tau| + sqrt(1+tau^2));
                # python-float literals stay in the working dtype
                tau = ops.div(ops.sub(m[q, q], m[p, p]), ops.add(apq, apq))
                root = ops.sqrt(ops.add(1.0, ops.mul(tau, tau)))
                t = ops.div(1.0, ops.add(abs(tau), root))
                if tau < 0:
                    t = -t
                c = ops.div(1.0, ops.sqrt(ops.add(1.0, ops.mul(t, t))))
                s = ops.mul(t, c)

                if ops.dtype is not None:
                    # rotation as 2x2 matmuls in the native dtype
                    rot = np.array([[c, -s], [s, c]], dtype=ops.dtype)
                    pq = [p, q]
                    m[pq, :] = rot @ m[pq, :]
                    m[:, pq] = m[:, pq] @ rot.T
                    v[:, pq] = v[:, pq] @ rot.T
                else:
                    rp = m[p, :].copy()
                    rq = m[q, :].copy()
                    m[p, :] = ops.sub(ops.mul(c, rp), ops.mul(s, rq))
                    m[q, :] = ops.add(ops.mul(s, rp), ops.mul(c, rq))
                    cp = m[:, p].copy()
                    cq = m[:, q].copy()
                    m[:, p] = ops.sub(ops.mul(c, cp), ops.mul(s, cq))
                    m[:, q] = ops.add(ops.mul(s, cp), ops.mul(c, cq))
                    vp = v[:, p].copy()
                    vq = v[:, q].copy()
                    v[:, p] = ops.sub(ops.mul(c, vp), ops.mul(s, vq))
                    v[:, q] = ops.add(ops.mul(s, vp), ops.mul(c, vq))
    else:
        raise NoConvergence(f"off-diagonal mass still above {tol}*|a|_F after {MAX_SWEEPS} sweeps")

    lam = np.diag(np.asarray(m, dtype=np.float64)).copy()
    vec = np.asarray(v, dtype=np.float64)
    order = np.argsort(lam, kind="stable")
    return EigenPairs(x=vec[:, order], lam=lam[order], fmt=fmt)


def pair_residuals(a, pairs: EigenPairs, norm_a2: float | None = None) -> np.ndarray:
    """Per-pair |A x - lambda x|_2 / (|A|_2 |x|_2), binary64."""
    a = np.asarray(a, dtype=np.float64)
    if norm_a2 is None:
        norm_a2 = float(np.linalg.norm(a, 2))
    res = a @ pairs.x - pairs.x * pairs.lam[None, :]
    return np.linalg.norm(res, axis=0) / (norm_a2 * np.linalg.norm(pairs.x, axis=0))


def refine_syev(a, pairs: EigenPairs):
    """One block refinement iteration in binary64.

    R = I - X^T X and S = X^T A X give corrected eigenvalues
    s_ii/(1 - r_ii); the update matrix mixes pairs whose eigenvalue gap
    exceeds the cluster threshold omega (Frobenius-norm based) and falls
    back to r_ij/2 inside clusters. Returns the refined pairs and the
    step record.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(pairs.x, dtype=np.float64)
    ell = x.shape[1]
    r = np.eye(ell) - x.T @ x
    s = x.T @ (a @ x)
    lam = np.diag(s) / (1.0 - np.diag(r))
    d = np.diag(lam)
    omega = 2.0 * (np.linalg.norm(s - d, "fro") + np.linalg.norm(a, "fro") * np.linalg.norm(r, "fro"))

    gap = lam[None, :] - lam[:, None]          # lam_j - lam_i
    wide = np.abs(gap) > omega
    with np.errstate(divide="ignore", invalid="ignore"):
        e_wide = (s + lam[None, :] * r) / gap
    e = np.where(wide, e_wide, r / 2.0)

    x_new = x + x @ e
    new_pairs = EigenPairs(x=x_new, lam=lam.copy(), fmt=FP64)
    residuals = pair_residuals(a, new_pairs)
    return new_pairs, RefineStep(e=e, omega=float(omega), residuals=residuals)


def sice_refine(a, x0, lambda0: float, max_iters: int = 20):
    """Refine a single eigenpair through column-replaced solves.

    Normalizes x so its largest-magnitude component (index s) is exactly
    1, then repeatedly solves B y = lambda x - A x where B is
    (A - lambda I) with column s replaced by -x; y[s] corrects the
    eigenvalue, the rest corrects the eigenvector. (The residual sign
    follows from the correction equation
    (A - lambda I) y~ - mu x = lambda x - A x.) Stops when the
    correction stalls (|2 y_i[s]| > |y_{i-1}[s]|), essentially vanishes,
    or max_iters is hit. Returns (x, lambda, iterations).
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    x = np.asarray(x0, dtype=np.float64).copy()
    if not np.any(x != 0):
        raise ValueError("x0 must be nonzero")
    s = int(np.argmax(np.abs(x)))
    x = x / x[s]
    lam = float(lambda0)

    prev_ys = None
    iters = 0
    eps = np.finfo(np.float64).eps
    for it in range(1, max_iters + 1):
        iters = it
        b = a - lam * np.eye(n)
        b[:, s] = -x
        rhs = lam * x - a @ x
        try:
            y = np.linalg.solve(b, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularB(str(exc)) from exc
        if not np.isfinite(y).all():
            raise SingularB("nonfinite correction")
        lam += y[s]
        ys = float(y[s])
        x = x + y
        x[s] = 1.0                      # y[s] carried the eigenvalue correction
        if abs(ys) <= 4 * eps * max(abs(lam), 1.0) and np.abs(y).max() <= 4 * eps * np.abs(x).max():
            break
        if prev_ys is not None and abs(2.0 * ys) > abs(prev_ys):
            break
        prev_ys = ys
    return x, lam, iters
