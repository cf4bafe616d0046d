"""Refinement engines: classical/three-precision iterative refinement,
MGS-GMRES, GMRES-based refinement for square systems, and the
Cholesky-based least-squares variant.

Precision roles follow the usual convention: the factorization format
u_f does the O(n^3) work, the working format u_w runs the refinement
loop, and residuals are evaluated in u_r (at least as precise as u_w,
capped at binary64 here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .dense import FmtOps, flop_counts
from .errors import (
    FactorizationFailed,
    MplabError,
    NotPositiveDefinite,
    OverflowInFactor,
    RankDeficient,
)
from .prec import FP32, FP64, Format, Rng, round_array

__all__ = [
    "GmresParams",
    "IrConfig",
    "IrReport",
    "backward_error",
    "forward_error",
    "ir_solve",
    "gmres",
    "gmres_ir_solve",
    "lsq_gmres_ir",
    "orthogonality_defect",
]


def _is_half_like(fmt: Format) -> bool:
    # 16-bit-wide formats need range preparation before factorizing
    return fmt.exp_bits + fmt.sig_bits + 1 <= 16


@dataclass
class GmresParams:
    """Inner GMRES controls; None fields pick the standard defaults
    (tolerance 1e-4 for a 16-bit factorization, else 1e-8; maxit
    min(n, 100); no restart)."""

    tol: float | None = None
    maxit: int | None = None
    restart: int | None = None


@dataclass
class IrConfig:
    fact_fmt: Format
    work_fmt: Format
    resid_fmt: Format
    x_fmt: Format | None = None
    tol: float | None = None
    max_iters: int = 40
    inner: GmresParams | None = None
    tri_fmt: str = "work"        # precision of the triangular solves in the
    escalate_x: bool = True      # preconditioned operator: "work" or "fact"

    def __post_init__(self):
        if self.resid_fmt.u > self.work_fmt.u or self.work_fmt.u > self.fact_fmt.u:
            raise ValueError("precisions must satisfy u_r <= u_w <= u_f")
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.tri_fmt not in ("work", "fact"):
            raise ValueError("tri_fmt must be 'work' or 'fact'")

    def effective_x_fmt(self) -> Format:
        return self.x_fmt if self.x_fmt is not None else self.work_fmt

    def effective_tol(self, n: int) -> float:
        if self.tol is not None:
            return self.tol
        return max(n * self.work_fmt.u, 1e-14)


@dataclass
class IrReport:
    iterations: int = 0
    backward_errors: list = field(default_factory=list)
    forward_errors: list | None = None
    converged: bool = False
    inner_iterations: list = field(default_factory=list)
    shift_c: int | None = None
    status: str = "max_iters"    # converged | max_iters | diverged
    x_fmt_promotions: list = field(default_factory=list)


def _norm_inf_matrix(a) -> float:
    if hasattr(a, "norm_inf"):
        return a.norm_inf()
    return float(np.abs(np.asarray(a, dtype=np.float64)).sum(axis=1).max())


def _matvec64(a, x):
    if hasattr(a, "matvec"):
        return a.matvec(x)
    return np.asarray(a, dtype=np.float64) @ x


def backward_error(a, x, b) -> float:
    """Normwise backward error |b - Ax|_inf / (|A|_inf |x|_inf + |b|_inf).

    Evaluated entirely in binary64; the |b|_inf term keeps the
    denominator nonzero at x = 0. Accepts dense arrays or anything with
    matvec/norm_inf methods (CSR matrices).
    """
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = b - _matvec64(a, x)
    num = float(np.abs(r).max()) if r.size else 0.0
    denom = _norm_inf_matrix(a) * float(np.abs(x).max(initial=0.0)) + float(np.abs(b).max(initial=0.0))
    if denom == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / denom


def forward_error(x_hat, x_true) -> float:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    return float(np.abs(x_hat - x_true).max() / np.abs(x_true).max())


def _matvec_fmt(a, x, fmt: Format, rng: Rng | None = None):
    """y = a @ x with multiply/accumulate in ``fmt`` (binary64 native)."""
    a = np.asarray(a, dtype=np.float64)
    flop_counts["matvec"] += 2 * a.shape[0] * a.shape[1]
    if fmt.exp_bits == 11 and fmt.sig_bits == 52:
        return a @ np.asarray(x, dtype=np.float64)
    ops = FmtOps(fmt, rng)
    al = ops.prep(a)
    xl = ops.prep(np.asarray(x, dtype=np.float64))
    acc = ops.prep(np.zeros(a.shape[0]))
    for j in range(a.shape[1]):
        acc = ops.add(acc, ops.mul(al[:, j], xl[j]))
    return ops.finish(acc)


def _residual_fmt(a, x, b, fmt: Format, rng: Rng | None = None):
    ax = _matvec_fmt(a, x, fmt, rng)
    if fmt.exp_bits == 11 and fmt.sig_bits == 52:
        return np.asarray(b, dtype=np.float64) - ax
    ops = FmtOps(fmt, rng)
    return ops.finish(ops.sub(ops.prep(np.asarray(b, dtype=np.float64)), ops.prep(ax)))


@dataclass
class _Factors:
    """LU factors of the (possibly scaled) matrix mu*R*A*S = P^T L U."""

    perm: np.ndarray
    l: np.ndarray
    u: np.ndarray
    fact_fmt: Format
    mu: float
    r_scale: np.ndarray
    s_scale: np.ndarray

    def solve(self, v, fmt: Format, rng: Rng | None = None):
        """Approximate A^{-1} v via the stored factors, triangular solves
        in ``fmt``; never forms inverse matrices.

        The right-hand side is renormalized by an exact power of two so
        narrow formats neither overflow during substitution nor lose the
        residual to subnormals; power-of-two scaling only shifts
        exponents, so the roundings are otherwise unchanged.
        """
        v = np.asarray(v, dtype=np.float64)
        y64 = self.mu * (self.r_scale * v)
        nrm = float(np.abs(y64).max(initial=0.0))
        if nrm == 0.0 or not np.isfinite(nrm):
            return np.zeros_like(v)
        # bring max|rhs| near x_max/16 via exponent arithmetic (safe for
        # arbitrarily tiny residual norms)
        k_target = math.frexp(fmt.x_max / 16.0)[1]
        sigma = math.ldexp(1.0, min(k_target - math.frexp(nrm)[1], 1000))
        t = None
        for _ in range(5):
            y = round_array(sigma * y64, fmt, rng)
            t = dense.tri_solve_emulated(self.l, y[self.perm], "lower",
                                         unit_diag=True, fmt=fmt, rng=rng)
            t = dense.tri_solve_emulated(self.u, t, "upper", fmt=fmt, rng=rng)
            if np.isfinite(t).all():
                return self.s_scale * (t / sigma)
            sigma /= 2.0 ** 8
        return self.s_scale * (np.where(np.isfinite(t), t, 0.0) / sigma)


def _factorize(a, fact_fmt: Format, theta: float, rng: Rng | None):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    try:
        if _is_half_like(fact_fmt):
            r, s = dense.equilibrate(a)
            # elimination growth can overlflow the narrow range even after
            # scaling; back theta off geometrically until the factors fit
            last = None
            for shrink in range(4):
                sh = dense.scale_round(a, r, s, theta / 4 ** shrink, fact_fmt, rng)
                try:
                    perm, l, u = dense.lu_emulated(sh.a_h, fact_fmt, rng)
                except OverflowInFactor as exc:
                    last = exc
                    continue
                return _Factors(perm, l, u, fact_fmt, sh.mu, sh.r_scale, sh.s_scale)
            raise last
        ah = round_array(a, fact_fmt, rng)
        perm, l, u = dense.lu_emulated(ah, fact_fmt, rng)
        return _Factors(perm, l, u, fact_fmt, 1.0, np.ones(n), np.ones(n))
    except MplabError as exc:
        raise FactorizationFailed(f"low-precision factorization failed: {exc}") from exc


_PROMOTION_LADDER = [FP32, FP64]


def _refine_loop(a, b, cfg: IrConfig, x0, correct, x_true=None, rng=None):
    """Shared outer loop: residual, correction, update, bookkeeping."""
    n = len(b)
    tol = cfg.effective_tol(n)
    x_fmt = cfg.effective_x_fmt()
    report = IrReport(forward_errors=[] if x_true is not None else None)

    x = round_array(np.asarray(x0, dtype=np.float64), x_fmt, rng)
    be_min = np.inf
    strikes = 0
    stagnant = 0
    for it in range(cfg.max_iters + 1):
        be = backward_error(a, x, b)
        report.backward_errors.append(be)
        if x_true is not None:
            report.forward_errors.append(forward_error(x, x_true))
        if be <= tol:
            report.status = "converged"
            report.converged = True
            break
        if np.isfinite(be) and be < be_min:
            be_min = be
        if be > 10.0 * be_min or not np.isfinite(be):
            strikes += 1
            if strikes >= 3:
                report.status = "diverged"
                break
        else:
            strikes = 0
        if it == cfg.max_iters:
            report.status = "max_iters"
            break

        prev = report.backward_errors[-2] if len(report.backward_errors) > 1 else np.inf
        stagnant = stagnant + 1 if be >= 0.5 * prev else 0
        if cfg.escalate_x and stagnant >= 3 and x_fmt.u > FP64.u:
            for cand in _PROMOTION_LADDER:
                if cand.u < x_fmt.u:
                    report.x_fmt_promotions.append((it, x_fmt.name(), cand.name()))
                    x_fmt = cand
                    stagnant = 0
                    break

        r = _residual_fmt(a, x, b, cfg.resid_fmt, rng)
        z, inner_count = correct(r)
        if inner_count is not None:
            report.inner_iterations.append(inner_count)
        x = round_array(x + z, x_fmt, rng)

    report.iterations = len(report.backward_errors) - 1
    return x, report


def ir_solve(a, b, cfg: IrConfig, x_true=None, theta: float = 0.1, rng: Rng | None = None):
    """Classical mixed-precision iterative refinement.

    Factorization and correction solves in cfg.fact_fmt (with two-sided
    scaling preparation for 16-bit formats), residuals in cfg.resid_fmt,
    updates in the solution format. Non-convergence and divergence are
    reported through the IrReport status, factorization failures raise.
    """
    if cfg.inner is not None:
        raise ValueError("ir_solve is the plain variant; use gmres_ir_solve for inner=Gmres")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fac = _factorize(a, cfg.fact_fmt, theta, rng)
    x0 = fac.solve(b, cfg.fact_fmt, rng)

    def correct(r):
        return fac.solve(r, cfg.fact_fmt, rng), None

    return _refine_loop(a, b, cfg, x0, correct, x_true=x_true, rng=rng)


def gmres(apply_op, precond, rhs, tol: float, maxit: int, fmt: Format,
          restart: int | None = None, rng: Rng | None = None):
    """Left-preconditioned MGS-GMRES with all arithmetic in ``fmt``.

    Solves M A z = M rhs for z where apply_op(v) = A v and
    precond(v) = M v. Returns (z, res_history, basis_defect):
    res_history is the Givens-estimated preconditioned residual per
    iteration, basis_defect is |I - V^T V|_F of the final Krylov basis.
    A zero subdiagonal is a lucky breakdown (exact solution found);
    hitting maxit leaves the best iterate with its history.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.size
    ops = FmtOps(fmt, rng)
    cycle_len = maxit if restart is None else min(restart, maxit)

    def vnorm(v):
        return ops.sqrt(ops.dot(v, v))

    x = np.zeros(n)
    res_history = []
    beta0 = None
    defect = 0.0
    iters_left = maxit
    converged = False

    while iters_left > 0 and not converged:
        # preconditioned residual for this cycle (x = 0 on the first one)
        ax = np.asarray(apply_op(x), dtype=np.float64) if np.any(x != 0) else np.zeros(n)
        r = ops.prep(np.asarray(precond(ops.finish(ops.sub(ops.prep(rhs), ops.prep(ax)))), dtype=np.float64))
        beta = vnorm(r)
        if beta0 is None:
            beta0 = float(beta)
        if beta0 == 0.0 or float(beta) == 0.0:
            converged = True
            break

        m = min(cycle_len, iters_left)
        v = [ops.div(r, beta)]
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = float(beta)
        k = 0
        lucky = False
        for j in range(m):
            w = ops.prep(np.asarray(precond(apply_op(ops.finish(v[j]))), dtype=np.float64))
            for i in range(j + 1):
                hij = ops.dot(w, v[i])
                w = ops.sub(w, ops.mul(v[i], hij))
                h[i, j] = float(hij)
            hh = float(vnorm(w))
            h[j + 1, j] = hh
            k = j + 1
            if hh == 0.0:
                lucky = True
            else:
                v.append(ops.div(w, hh))
            # apply stored rotations, then form the new one (scalar fmt ops)
            for i in range(j):
                t1 = ops.add(ops.mul(cs[i], h[i, j]), ops.mul(sn[i], h[i + 1, j]))
                t2 = ops.sub(ops.mul(cs[i], h[i + 1, j]), ops.mul(sn[i], h[i, j]))
                h[i, j] = float(t1)
                h[i + 1, j] = float(t2)
            denom = float(ops.sqrt(ops.add(ops.mul(h[j, j], h[j, j]), ops.mul(h[j + 1, j], h[j + 1, j]))))
            if denom == 0.0:
                # the new column vanished entirely; drop it and stop
                k = j
                lucky = True
                break
            cs[j] = float(ops.div(h[j, j], denom))
            sn[j] = float(ops.div(h[j + 1, j], denom))
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = float(ops.mul(-sn[j], g[j]))
            g[j] = float(ops.mul(cs[j], g[j]))
            res_history.append(abs(g[j + 1]))
            if lucky or abs(g[j + 1]) <= tol * beta0:
                converged = True
                break

        iters_left -= k
        if k > 0:
            y = dense.tri_solve_emulated(h[:k, :k], g[:k], "upper", fmt=fmt, rng=rng)
            xk = ops.prep(x)
            for i in range(k):
                xk = ops.add(xk, ops.mul(v[i], ops.prep(np.float64(y[i]))))
            x = ops.finish(xk)
            vmat = np.column_stack([ops.finish(vi) for vi in v])
            defect = orthogonality_defect(vmat)
        if restart is None:
            break
        if lucky:
            converged = True

    return x, res_history, defect


def gmres_ir_solve(a, b, cfg: IrConfig, x_true=None, theta: float = 0.1,
                   rng: Rng | None = None):
    """GMRES-based iterative refinement for square systems.

    The correction equation is solved by MGS-GMRES on the left-
    preconditioned operator U^-1 L^-1 A in the working precision; the
    factors are applied through triangular solves only (inverses are
    never formed). The inner tolerance defaults to 1e-4 for a 16-bit
    factorization format and 1e-8 for fp32.
    """
    if cfg.inner is None:
        raise ValueError("gmres_ir_solve needs cfg.inner = GmresParams(...)")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    fac = _factorize(a, cfg.fact_fmt, theta, rng)

    inner_tol = cfg.inner.tol
    if inner_tol is None:
        inner_tol = 1e-4 if _is_half_like(cfg.fact_fmt) else 1e-8
    inner_maxit = cfg.inner.maxit if cfg.inner.maxit is not None else min(n, 100)
    tri_fmt = cfg.work_fmt if cfg.tri_fmt == "work" else cfg.fact_fmt

    def apply_op(v):
        return _matvec_fmt(a, v, cfg.work_fmt, rng)

    def precond(v):
        return fac.solve(v, tri_fmt, rng)

    def correct(r):
        rw = round_array(r, cfg.work_fmt, rng)
        z, hist, _ = gmres(apply_op, precond, rw, inner_tol, inner_maxit,
                           cfg.work_fmt, restart=cfg.inner.restart, rng=rng)
        return z, len(hist)

    x0 = fac.solve(b, cfg.fact_fmt, rng)
    return _refine_loop(a, b, cfg, x0, correct, x_true=x_true, rng=rng)


def lsq_gmres_ir(a, b, cfg: IrConfig, theta: float = 0.1, c0: int = 2,
                 x_true=None, rng: Rng | None = None):
    """Cholesky-based GMRES-IR for min |b - Ax|_2 with m >= n, full rank.

    Builds the normal-equations preconditioner from a shifted
    low-precision Cholesky factorization of C = B_h^T B_h (B = A S with
    unit column norms), then refines with GMRES on M A^T A. Convergence
    is measured as the normal-equations backward error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape
    if m < n:
        raise ValueError("need m >= n")
    fact = cfg.fact_fmt
    col_norms = np.linalg.norm(a, axis=0)
    if (col_norms == 0).any():
        raise ValueError("columns of a must be nonzero")
    s = 1.0 / col_norms
    bmat = a * s[None, :]
    mu = theta * fact.x_max
    bh = round_array(np.sqrt(mu) * bmat, fact, rng)
    c = dense.gemm_emulated(bh.T, bh, in_fmt=fact, acc_fmt=fact, rng=rng)

    cc = int(c0)
    r_factor = None
    for _ in range(dense.MAX_SHIFT_DOUBLINGS + 1):
        g = c + cc * fact.u * np.diag(np.diag(c))
        try:
            r_factor = dense.chol_emulated(g, fact, rng)
            break
        except NotPositiveDefinite:
            cc *= 2
    if r_factor is None:
        raise RankDeficient(f"shifted Cholesky still failing at c={cc}")

    bh_vec = round_array(s * (a.T @ b), fact, rng)
    w0 = dense.tri_solve_emulated(r_factor.T, bh_vec, "lower", fmt=fact, rng=rng)
    y0 = dense.tri_solve_emulated(r_factor, w0, "upper", fmt=fact, rng=rng)
    x0 = mu * (s * y0)

    gram = a.T @ a
    atb = a.T @ b
    inner = cfg.inner if cfg.inner is not None else GmresParams()
    inner_tol = inner.tol if inner.tol is not None else (1e-4 if _is_half_like(fact) else 1e-8)
    inner_maxit = inner.maxit if inner.maxit is not None else min(n, 100)
    tri_fmt = cfg.work_fmt if cfg.tri_fmt == "work" else fact

    def apply_normal(v):
        av = _matvec_fmt(a, v, cfg.resid_fmt, rng)
        return _matvec_fmt(a.T, av, cfg.resid_fmt, rng)

    def precond(v):
        w = round_array(s * np.asarray(v, dtype=np.float64), cfg.work_fmt, rng)
        t = dense.tri_solve_emulated(r_factor.T, w, "lower", fmt=tri_fmt, rng=rng)
        t = dense.tri_solve_emulated(r_factor, t, "upper", fmt=tri_fmt, rng=rng)
        return mu * (s * t)

    def correct(r):
        rw = round_array(r, cfg.work_fmt, rng)
        z, hist, _ = gmres(apply_normal, precond, rw, inner_tol, inner_maxit,
                           cfg.work_fmt, restart=inner.restart, rng=rng)
        return z, len(hist)

    def normal_residual(x):
        return a.T @ (b - a @ x) if cfg.resid_fmt.sig_bits == 52 else \
            _matvec_fmt(a.T, _residual_fmt(a, x, b, cfg.resid_fmt, rng), cfg.resid_fmt, rng)

    # reuse the shared loop against the normal equations
    n_tol = cfg.effective_tol(n)
    x_fmt = cfg.effective_x_fmt()
    report = IrReport(forward_errors=[] if x_true is not None else None, shift_c=cc)
    x = round_array(x0, x_fmt, rng)
    for it in range(cfg.max_iters + 1):
        be = backward_error(gram, x, atb)
        report.backward_errors.append(be)
        if x_true is not None:
            report.forward_errors.append(forward_error(x, x_true))
        if be <= n_tol:
            report.status = "converged"
            report.converged = True
            break
        if it == cfg.max_iters:
            report.status = "max_iters"
            break
        r = normal_residual(x)
        z, count = correct(r)
        report.inner_iterations.append(count)
        x = round_array(x + z, x_fmt, rng)
    report.iterations = len(report.backward_errors) - 1
    return x, report


def orthogonality_defect(v) -> float:
    """|I - V^T V|_F in binary64 for a matrix of (intended) orthonormal columns."""
    v = np.asarray(v, dtype=np.float64)
    k = v.shape[1]
    return float(np.linalg.norm(np.eye(k) - v.T @ v, "fro"))
