"""Acceptance suite: one test per criterion, each printing a pass/fail
line with its measured runtime. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import time

import numpy as np
import pytest

import mplab.dense as dense
import mplab.eig as eig
import mplab.qilu as qilu
import mplab.refine as refine
import mplab.sparse as sparse
from mplab.cli import main as cli_main
from mplab.errors import MplabError, NotPositiveDefinite, Overflowed
from mplab.generators import MatrixGenerator, generate
from mplab.prec import FP16, FP32, FP64, make_rng, round_array
from mplab.sparse import CsrMatrix


def report(num, desc, cond, t0, limit):
    elapsed = time.perf_counter() - t0
    status = "PASS" if (cond and elapsed < limit) else "FAIL"
    print(f"[{status}] criterion {num}: {desc} ({elapsed:.1f}s, limit {limit:.0f}s)")
    assert cond, f"criterion {num} failed: {desc}"
    assert elapsed < limit, f"criterion {num} exceeded runtime limit ({elapsed:.1f}s)"


def randsvd(n, kappa, seed):
    return generate(MatrixGenerator("randsvd", n, kappa=kappa), make_rng(seed))


def test_criterion_01_emulation_fidelity():
    t0 = time.perf_counter()
    bits = np.arange(2 ** 16, dtype=np.uint16)
    lifted = bits.view(np.float16).astype(np.float64)
    finite = np.isfinite(lifted)
    ok = True
    for mode in ["nearest-even", "toward-zero", "toward-plus", "toward-minus"]:
        fmt = FP16.with_rounding(mode)
        out = round_array(lifted[finite], fmt)
        with np.errstate(over="ignore"):
            ok &= bool(np.array_equal(out.astype(np.float16).view(np.uint16),
                                      bits[finite]))
        inf_in = lifted[np.isinf(lifted)]
        ok &= bool(np.array_equal(round_array(inf_in, fmt), inf_in))
        nan_in = lifted[np.isnan(lifted)]
        ok &= bool(np.isnan(round_array(nan_in, fmt)).all())
    report(1, "fp16 round-trip bit-exact over all payloads, 4 rounding modes",
           ok, t0, 10.0)


def _ir_run(kappa, seed, inner=None):
    a = randsvd(100, kappa, seed)
    b = make_rng(seed + 10 ** 6).uniform(-1.0, 1.0, 100)
    cfg = refine.IrConfig(fact_fmt=FP16, work_fmt=FP64, resid_fmt=FP64,
                          tol=1e-14, max_iters=20, inner=inner)
    solver = refine.gmres_ir_solve if inner is not None else refine.ir_solve
    x, rep = solver(a, b, cfg)
    return rep


def test_criterion_02_classical_ir_regime():
    t0 = time.perf_counter()
    ok = True
    for kappa in [1e1, 1e2, 1e3]:
        good = sum(1 for seed in range(20)
                   if (r := _ir_run(kappa, seed)).converged and r.iterations <= 20)
        ok &= good >= 18
    failed = sum(1 for seed in range(20) if not _ir_run(1e6, seed).converged)
    ok &= failed >= 18
    report(2, "fp16 LU-IR converges for kappa <= 1e3 and fails at 1e6",
           ok, t0, 60.0)


def test_criterion_03_gmres_ir_relaxation():
    t0 = time.perf_counter()
    good = 0
    for seed in range(20):
        plain = _ir_run(1e6, seed)
        rep = _ir_run(1e6, seed, inner=refine.GmresParams())
        if (not plain.converged) and rep.converged and rep.backward_errors[-1] <= 1e-14:
            good += 1
    report(3, "GMRES-IR reaches 1e-14 at kappa=1e6 where plain IR fails",
           good >= 18, t0, 120.0)


def test_criterion_04_shifted_cholesky():
    t0 = time.perf_counter()
    n = 40
    instances = []
    seed = 0
    while len(instances) < 20 and seed < 100:
        rng = make_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        lam = np.geomspace(1.0, 10.0 ** -rng.uniform(6.0, 8.0), n)
        a = (q * lam) @ q.T
        d = np.sqrt(np.diag(a))
        h = a / np.outer(d, d)
        np.fill_diagonal(h, 1.0)
        try:
            dense.chol_emulated(round_array(0.1 * FP16.x_max * h, FP16), FP16)
        except NotPositiveDefinite:
            instances.append(a)     # direct fp16 rounding is indefinite
        seed += 1
    ok = len(instances) == 20
    c0 = 2
    for a in instances:
        try:
            res = dense.chol_half(a, theta=0.1, c0=c0, fmt=FP16)
        except MplabError:
            ok = False
            continue
        ok &= res.c_final <= 2 ** 10 * c0
        ok &= bool(np.isfinite(res.r_factor).all())
    report(4, "chol_half rescues 20/20 fp16-indefinite SPD instances, no overflow",
           ok, t0, 30.0)


def test_criterion_05_quantized_integer_lu():
    t0 = time.perf_counter()
    sizes = [100, 200, 500]
    seeds = range(30)
    gm = {}
    overflow_typed = True
    silent_bad = False
    counts = {}
    for n in sizes:
        for r in [2, 6, 10]:
            errs = []
            for seed in seeds:
                rng = make_rng(seed)
                a = rng.uniform(-1.0, 1.0, (n, n))
                b = rng.uniform(-1.0, 1.0, n)
                try:
                    perm, l, u, m = qilu.qilu_factor(a, r=r)
                    x = np.linalg.solve(u, np.linalg.solve(l, (b / m)[perm]))
                    be = refine.backward_error(a, x, b)
                    errs.append(be)
                    if be > 1e-6:
                        silent_bad = True   # paper's threshold for a corrupt result
                except Overflowed:
                    pass
                except MplabError:
                    overflow_typed = False
            counts[(n, r)] = len(errs)
            gm[(n, r)] = (np.exp(np.mean(np.log(errs))) if errs else None)
        # full single-precision solver baseline
        errs32 = []
        for seed in seeds:
            rng = make_rng(seed)
            a = rng.uniform(-1.0, 1.0, (n, n))
            b = rng.uniform(-1.0, 1.0, n)
            perm, l, u = dense.lu_emulated(a, FP32)
            y = dense.tri_solve_emulated(l, b[perm], "lower", unit_diag=True, fmt=FP32)
            x = dense.tri_solve_emulated(u, y, "upper", fmt=FP32)
            errs32.append(refine.backward_error(a, x, b))
        gm[(n, "fp32")] = np.exp(np.mean(np.log(errs32)))

    ok = overflow_typed and not silent_bad
    for n in sizes:
        ok &= gm[(n, 10)] is not None and gm[(n, 10)] <= 10.0 * gm[(n, "fp32")]
        # monotone error growth with r over the r levels that complete;
        # r=2 cannot complete at these sizes (elimination growth exceeds
        # the int32 headroom of 2) and must have failed loudly above
        ok &= counts[(n, 2)] == 0
        ok &= gm[(n, 6)] is not None and gm[(n, 6)] <= gm[(n, 10)]
    report(5, "integer LU: r=10 within 10x of fp32 solver, error grows with r, "
              "overflow always typed", ok, t0, 120.0)


def test_criterion_06_eigen_refinement():
    t0 = time.perf_counter()
    n = 200
    good = 0
    monotone = True
    for seed in range(10):
        rng = make_rng(seed)
        a = rng.uniform(-1.0, 1.0, (n, n))
        a = (a + a.T) / 2.0
        pairs = eig.jacobi_eig(a, FP32, tol=1e-5)
        norm2 = float(np.linalg.norm(a, 2))
        seq = [eig.pair_residuals(a, pairs, norm2)]
        apps = 0
        while seq[-1].max() >= 1e-13 and apps < 4:
            pairs, step = eig.refine_syev(a, pairs)
            seq.append(step.residuals)
            apps += 1
        if seq[-1].max() < 1e-13:
            good += 1
        for prev, cur in zip(seq, seq[1:]):
            monotone &= bool(np.all(cur <= prev))
    report(6, "refine_syev: <=4 applications reach 1e-13 (n=200), per-pair "
              "non-increasing", good >= 9 and monotone, t0, 120.0)


def test_criterion_07_sice():
    t0 = time.perf_counter()
    good = 0
    for seed in range(20):
        rng = make_rng(seed)
        a = rng.uniform(-1.0, 1.0, (100, 100))
        a = (a + a.T) / 2.0
        w, v = np.linalg.eigh(a)
        i = int(rng.integers(0, 100))
        x0 = v[:, i] + 1e-3 * rng.standard_normal(100)
        lam0 = w[i] + 1e-3
        x, lam, iters = eig.sice_refine(a, x0, lam0)
        if abs(lam - w[i]) <= 1e-13 * np.abs(w).max() and iters <= 8:
            good += 1
    report(7, "SICE recovers perturbed eigenpairs to 1e-13*|A|_2 in <=8 iterations",
           good >= 18, t0, 60.0)


def test_criterion_08_clustered_spmv():
    t0 = time.perf_counter()
    rng = make_rng(0)
    nnz = 10 ** 5
    vals = np.concatenate([rng.normal(100.0, 2e-3, nnz // 2),
                           rng.normal(-100.0, 2e-3, nnz // 2)])
    a = CsrMatrix(1, nnz, np.array([0, nnz]), np.arange(nnz), vals)
    c = sparse.compress_clustered(a, 256, 1e-6, make_rng(1), residual_fmt=FP16)
    pv, total = sparse.footprint_bits(c)
    ok = pv <= 26.0
    recon = c.reconstructed_values()
    err_cluster = np.abs(recon - vals)
    err_fp32 = np.abs(round_array(vals, FP32) - vals)
    ok &= float(np.mean(err_cluster <= err_fp32)) >= 0.99
    # tau = 0 lossless path
    c0 = sparse.compress_clustered(a, 256, 0.0, make_rng(2))
    ok &= bool(np.array_equal(c0.reconstructed_values(), vals))
    x = rng.uniform(-1.0, 1.0, nnz)
    ok &= bool(np.array_equal(sparse.spmv_clustered(c0, x), sparse.spmv(a, x, FP64)))
    report(8, "clustered SpMV: <=26 bits/value, beats fp32 storage for >=99%, "
              "tau=0 bit-lossless", ok, t0, 30.0)


def test_criterion_09_adaptive_block_jacobi():
    t0 = time.perf_counter()
    mats = [generate(MatrixGenerator("laplacian2d", 32), make_rng(0))]
    for seed in range(5):
        mats.append(CsrMatrix.from_dense(
            generate(MatrixGenerator("spd-shifted", 96), make_rng(seed))))
    ok = True
    any_sub = False
    for mi, a in enumerate(mats):
        rng = make_rng(100 + mi)
        b = rng.uniform(-1.0, 1.0, a.n_rows)
        p_ad = sparse.block_jacobi_build(a, 8, digit_tau=0.1)
        p_64 = sparse.block_jacobi_build(a, 8, ladder=(FP64,))
        _, it_ad, _ = sparse.pcg(a, b, p_ad, tol=1e-10, maxit=3000)
        _, it_64, _ = sparse.pcg(a, b, p_64, tol=1e-10, maxit=3000)
        ok &= it_ad <= np.ceil(1.10 * it_64)
        any_sub |= any(f.name() != "fp64" for f in p_ad.block_fmts)
    report(9, "adaptive block-Jacobi PCG within 110% of fp64-storage iterations, "
              "sub-fp64 tags used", ok and any_sub, t0, 60.0)


def test_criterion_10_oracle_equivalence():
    t0 = time.perf_counter()
    scipy_linalg = pytest.importorskip("scipy.linalg")
    scipy_sparse = pytest.importorskip("scipy.sparse")
    ok = True
    for seed in range(20):
        rng = make_rng(seed)
        n = int(rng.integers(10, 51))
        bound = 10 * n * FP64.u

        a = rng.uniform(-1.0, 1.0, (n, n)) + n * np.eye(n)
        perm, l, u = dense.lu_emulated(a, FP64)
        lu_ref, piv = scipy_linalg.lu_factor(a)
        l_ref = np.tril(lu_ref, -1) + np.eye(n)
        u_ref = np.triu(lu_ref)
        ok &= np.abs(l - l_ref).max() / np.abs(l_ref).max() <= bound
        ok &= np.abs(u - u_ref).max() / np.abs(u_ref).max() <= bound

        spd = a @ a.T + n * np.eye(n)
        r = dense.chol_emulated(spd, FP64)
        r_ref = np.linalg.cholesky(spd).T
        ok &= np.abs(r - r_ref).max() / np.abs(r_ref).max() <= bound

        mask = rng.uniform(size=(n, n)) < 0.3
        np.fill_diagonal(mask, True)
        ad = np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)
        csr = CsrMatrix.from_dense(ad)
        x = rng.uniform(-1.0, 1.0, n)
        y = sparse.spmv(csr, x, FP64)
        y_ref = scipy_sparse.csr_matrix(ad) @ x
        scale = max(np.abs(y_ref).max(), 1.0)
        ok &= np.abs(y - y_ref).max() / scale <= bound

        b = rng.uniform(-1.0, 1.0, n)
        z, hist, _ = refine.gmres(lambda v: a @ v, lambda v: v, b, 1e-15, n, FP64)
        z_ref = np.linalg.solve(a, b)
        ok &= np.abs(z - z_ref).max() / np.abs(z_ref).max() <= bound
    report(10, "fp64 kernels match independent binary64 references to 10*n*u",
           ok, t0, 60.0)


def test_criterion_11_deterministic_csv(tmp_path):
    t0 = time.perf_counter()
    spec = tmp_path / "det.spec"
    spec.write_text(
        "[experiment]\nkind = ir\n"
        "[matrix]\nfamily = randsvd\nsizes = 30\nkappa = 1e2\n"
        "[precision]\nfact = fp32\nwork = fp64\nresid = fp64\n"
        "[seeds]\nseeds = 0, 1, 2\n")
    out1, out2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    code1 = cli_main(["run", str(spec), "--out", str(out1)])
    code2 = cli_main(["run", str(spec), "--out", str(out2)])
    ok = code1 == 0 and code2 == 0 and out1.read_bytes() == out2.read_bytes()
    report(11, "repeated mplab run produces byte-identical CSV", ok, t0, 30.0)
