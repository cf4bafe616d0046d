"""Experiment harness: spec files, sweep execution, CSV emission.

A spec is a key=value file with section headers (configparser syntax):

    [experiment]
    kind = ir                  ; ir | gmres-ir | lsq | qilu | eig |
                               ; spmv-compress | block-jacobi
    [matrix]
    family = randsvd           ; or path = some.mtx
    sizes = 100, 200
    kappa = 1e3
    [precision]
    fact = fp16
    work = fp64
    resid = fp64
    [params]
    theta = 0.1
    [seeds]
    seeds = 0, 1, 2

Each (size, seed, variant) run appends one CSV row; failures become rows
with a status column and never abort the sweep. Output is byte-identical
for identical spec and seeds (wall-clock timings are only recorded when
explicitly requested). The summary reports geometric means with 15%/85%
percentiles.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import dense, eig, qilu, refine, sparse
from .errors import MplabError
from .generators import MatrixGenerator, generate
from .mmio import load_matrix_market
from .prec import FP32, FP64, Format, format_by_name, make_rng
from .sparse import CsrMatrix

__all__ = ["ExperimentSpec", "SpecError", "run_experiment", "CSV_COLUMNS"]

KINDS = ("ir", "gmres-ir", "lsq", "qilu", "eig", "spmv-compress", "block-jacobi")

CSV_COLUMNS = [
    "kind", "seed", "n", "m", "fact", "work", "resid", "x",
    "status", "iterations", "inner_iterations",
    "backward_error", "forward_error",
    "kappa", "r", "k", "tau", "theta", "block_size", "digit_tau",
    "bits_per_value", "max_reconstruction_error",
    "pcg_iterations", "pcg_iterations_fp64", "sub_fp64_blocks",
    "max_pair_residual", "shift_c",
]


class SpecError(MplabError):
    """Malformed experiment spec."""


@dataclass
class ExperimentSpec:
    kind: str
    matrix: dict = field(default_factory=dict)
    precisions: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if not self.seeds:
            raise SpecError("seeds must be non-empty")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        import configparser

        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise SpecError(f"cannot parse spec: {exc}") from exc
        if "experiment" not in cp or "kind" not in cp["experiment"]:
            raise SpecError("spec needs [experiment] kind = ...")
        kind = cp["experiment"]["kind"].strip()
        matrix = dict(cp["matrix"]) if "matrix" in cp else {}
        precisions = dict(cp["precision"]) if "precision" in cp else {}
        params = dict(cp["params"]) if "params" in cp else {}
        seeds = []
        if "seeds" in cp and "seeds" in cp["seeds"]:
            seeds = [int(s) for s in cp["seeds"]["seeds"].replace(",", " ").split()]
        return cls(kind=kind, matrix=matrix, precisions=precisions,
                   seeds=seeds, params=params)

    def fmt(self, role: str, default: Format) -> Format:
        name = self.precisions.get(role)
        return format_by_name(name) if name else default

    def sizes(self) -> list:
        raw = self.matrix.get("sizes") or self.matrix.get("n")
        if raw is None:
            if "path" in self.matrix:
                return [0]      # size comes from the file
            raise SpecError("matrix needs sizes = ... (or a path)")
        return [int(s) for s in str(raw).replace(",", " ").split()]

    def fparam(self, key: str, default: float) -> float:
        return float(self.params.get(key, default))

    def iparam(self, key: str, default: int) -> int:
        return int(self.params.get(key, default))


def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _build_matrix(spec: ExperimentSpec, n: int, seed: int, square=True):
    if "path" in spec.matrix:
        return load_matrix_market(spec.matrix["path"])
    family = spec.matrix.get("family", "randsvd" if square else "uniform")
    kappa = float(spec.matrix["kappa"]) if "kappa" in spec.matrix else None
    density = float(spec.matrix["density"]) if "density" in spec.matrix else None
    m_rows = int(spec.matrix["m"]) if "m" in spec.matrix else None
    gen = MatrixGenerator(family=family, n=n, m=m_rows, kappa=kappa, density=density)
    return generate(gen, make_rng(seed))


def _as_dense(a):
    return a.to_dense() if isinstance(a, CsrMatrix) else np.asarray(a, dtype=np.float64)


def _as_csr(a):
    return a if isinstance(a, CsrMatrix) else CsrMatrix.from_dense(np.asarray(a))


def _row(spec, seed, n, **kw):
    row = {c: "" for c in CSV_COLUMNS}
    row.update(kind=spec.kind, seed=seed, n=n)
    for key, val in kw.items():
        row[key] = _fmt_cell(val)
    row["seed"] = str(seed)
    row["n"] = str(n)
    return row


def _ir_cfg(spec: ExperimentSpec, inner=None) -> refine.IrConfig:
    tol = spec.params.get("tol")
    return refine.IrConfig(
        fact_fmt=spec.fmt("fact", FP32),
        work_fmt=spec.fmt("work", FP64),
        resid_fmt=spec.fmt("resid", FP64),
        x_fmt=format_by_name(spec.precisions["x"]) if "x" in spec.precisions else None,
        tol=float(tol) if tol is not None else None,
        max_iters=spec.iparam("max_iters", 40),
        inner=inner,
    )


def _run_ir(spec, n, seed, kind):
    a = _as_dense(_build_matrix(spec, n, seed))
    rng = make_rng(seed + 10 ** 6)
    b = rng.uniform(-1.0, 1.0, a.shape[0])
    x_true = np.linalg.solve(a, b)
    inner = None
    if kind == "gmres-ir":
        inner = refine.GmresParams(
            tol=float(spec.params["inner_tol"]) if "inner_tol" in spec.params else None,
            maxit=spec.iparam("inner_maxit", 0) or None,
            restart=spec.iparam("restart", 0) or None,
        )
    cfg = _ir_cfg(spec, inner)
    theta = spec.fparam("theta", 0.1)
    solver = refine.gmres_ir_solve if inner is not None else refine.ir_solve
    x, rep = solver(a, b, cfg, x_true=x_true, theta=theta)
    return [_row(spec, seed, n,
                 fact=cfg.fact_fmt.name(), work=cfg.work_fmt.name(),
                 resid=cfg.resid_fmt.name(), x=cfg.effective_x_fmt().name(),
                 status=rep.status, iterations=rep.iterations,
                 inner_iterations=sum(rep.inner_iterations),
                 backward_error=rep.backward_errors[-1],
                 forward_error=rep.forward_errors[-1] if rep.forward_errors else None,
                 kappa=spec.matrix.get("kappa", ""), theta=theta)]


def _run_lsq(spec, n, seed):
    m_rows = int(spec.matrix.get("m", 2 * n))
    local = ExperimentSpec(kind=spec.kind, matrix=dict(spec.matrix, m=m_rows),
                           precisions=spec.precisions, seeds=[seed], params=spec.params)
    a = _as_dense(_build_matrix(local, n, seed, square=False))
    rng = make_rng(seed + 10 ** 6)
    b = rng.uniform(-1.0, 1.0, a.shape[0])
    cfg = _ir_cfg(spec)
    theta = spec.fparam("theta", 0.1)
    x, rep = refine.lsq_gmres_ir(a, b, cfg, theta=theta, c0=spec.iparam("c0", 2))
    return [_row(spec, seed, n, m=a.shape[0],
                 fact=cfg.fact_fmt.name(), work=cfg.work_fmt.name(),
                 resid=cfg.resid_fmt.name(), x=cfg.effective_x_fmt().name(),
                 status=rep.status, iterations=rep.iterations,
                 inner_iterations=sum(rep.inner_iterations),
                 backward_error=rep.backward_errors[-1],
                 theta=theta, shift_c=rep.shift_c)]


def _run_qilu(spec, n, seed):
    a = _as_dense(_build_matrix(spec, n, seed))
    rng = make_rng(seed + 10 ** 6)
    b = rng.uniform(-1.0, 1.0, n)
    rs = [int(s) for s in str(spec.params.get("r", "10")).replace(",", " ").split()]
    rows = []
    for r in rs:
        try:
            perm, l, u, m = qilu.qilu_factor(a, r=r)
            y = np.linalg.solve(l, (b / m)[perm])
            x = np.linalg.solve(u, y)
            be = refine.backward_error(a, x, b)
            rows.append(_row(spec, seed, n, status="ok", r=r, backward_error=be))
        except MplabError as exc:
            rows.append(_row(spec, seed, n, status=type(exc).__name__, r=r))
    if spec.params.get("fp32_baseline", "false").lower() in ("true", "1", "yes"):
        try:
            perm, l, u = dense.lu_emulated(a, FP32)
            y = dense.tri_solve_emulated(l, b[perm], "lower", unit_diag=True, fmt=FP32)
            x = dense.tri_solve_emulated(u, y, "upper", fmt=FP32)
            rows.append(_row(spec, seed, n, status="ok", fact="fp32",
                             backward_error=refine.backward_error(a, x, b)))
        except MplabError as exc:
            rows.append(_row(spec, seed, n, status=type(exc).__name__, fact="fp32"))
    return rows


def _run_eig(spec, n, seed):
    a = _as_dense(_build_matrix(spec, n, seed))
    a = (a + a.T) / 2.0
    fact = spec.fmt("fact", FP32)
    tol = spec.fparam("jacobi_tol", 1e-5)
    target = spec.fparam("target", 1e-13)
    max_apps = spec.iparam("max_apps", 4)
    pairs = eig.jacobi_eig(a, fact, tol=tol)
    res = eig.pair_residuals(a, pairs).max()
    apps = 0
    while res >= target and apps < max_apps:
        pairs, step = eig.refine_syev(a, pairs)
        res = step.residuals.max()
        apps += 1
    status = "ok" if res < target else "max_iters"
    return [_row(spec, seed, n, fact=fact.name(), status=status,
                 iterations=apps, max_pair_residual=float(res))]


def _run_compress(spec, n, seed):
    a = _as_csr(_build_matrix(spec, n, seed))
    k = spec.iparam("k", 256)
    tau = spec.fparam("tau", 1e-6)
    forced = spec.params.get("residual_fmt")
    c = sparse.compress_clustered(a, k, tau, make_rng(seed),
                                  residual_fmt=format_by_name(forced) if forced else None)
    recon_err = float(np.abs(c.reconstructed_values() - a.values).max())
    pv, total = sparse.footprint_bits(c)
    rng = make_rng(seed + 10 ** 6)
    xvec = rng.uniform(-1.0, 1.0, a.n_cols)
    fwd = float(np.abs(sparse.spmv_clustered(c, xvec) - sparse.spmv(a, xvec, FP64)).max())
    return [_row(spec, seed, a.n_rows, status="ok", k=k, tau=tau,
                 bits_per_value=pv, max_reconstruction_error=recon_err,
                 forward_error=fwd)]


def _run_block_jacobi(spec, n, seed):
    a = _as_csr(_build_matrix(spec, n, seed))
    bs = spec.iparam("block_size", 8)
    digit_tau = spec.fparam("digit_tau", 0.1)
    pcg_tol = spec.fparam("pcg_tol", 1e-10)
    maxit = spec.iparam("pcg_maxit", 2000)
    rng = make_rng(seed + 10 ** 6)
    b = rng.uniform(-1.0, 1.0, a.n_rows)
    p_ad = sparse.block_jacobi_build(a, bs, digit_tau=digit_tau)
    p_64 = sparse.block_jacobi_build(a, bs, ladder=(FP64,))
    _, it_ad, _ = sparse.pcg(a, b, p_ad, tol=pcg_tol, maxit=maxit)
    _, it_64, _ = sparse.pcg(a, b, p_64, tol=pcg_tol, maxit=maxit)
    sub = sum(1 for f in p_ad.block_fmts if f.name() != "fp64")
    return [_row(spec, seed, a.n_rows, status="ok", block_size=bs, digit_tau=digit_tau,
                 pcg_iterations=it_ad, pcg_iterations_fp64=it_64, sub_fp64_blocks=sub)]


_RUNNERS = {
    "ir": lambda spec, n, seed: _run_ir(spec, n, seed, "ir"),
    "gmres-ir": lambda spec, n, seed: _run_ir(spec, n, seed, "gmres-ir"),
    "lsq": lambda spec, n, seed: _run_lsq(spec, n, seed),
    "qilu": lambda spec, n, seed: _run_qilu(spec, n, seed),
    "eig": lambda spec, n, seed: _run_eig(spec, n, seed),
    "spmv-compress": lambda spec, n, seed: _run_compress(spec, n, seed),
    "block-jacobi": lambda spec, n, seed: _run_block_jacobi(spec, n, seed),
}


def _run_unit(spec, n, seed, timings):
    t0 = time.perf_counter()
    try:
        rows = _RUNNERS[spec.kind](spec, n, seed)
    except MplabError as exc:
        rows = [_row(spec, seed, n, status=type(exc).__name__)]
    if timings:
        elapsed = (time.perf_counter() - t0) * 1000.0
        for row in rows:
            row["wall_time_ms"] = f"{elapsed:.3f}"
    return rows


def geometric_mean(vals):
    vals = [v for v in vals if v > 0]
    if not vals:
        return float("nan")
    return float(np.exp(np.mean(np.log(vals))))


def summarize(rows):
    """Geometric means and 15%/85% percentiles of backward_error per
    (kind, n, r) group; other metrics are summarized where present."""
    groups = {}
    for row in rows:
        key = (row["kind"], row["n"], row.get("r", ""), row.get("fact", ""))
        groups.setdefault(key, []).append(row)
    lines = []
    for key in sorted(groups):
        grp = groups[key]
        ok = [r for r in grp if r["status"] in ("ok", "converged")]
        bes = [float(r["backward_error"]) for r in ok if r["backward_error"]]
        label = f"kind={key[0]} n={key[1]}" + (f" r={key[2]}" if key[2] else "") + \
            (f" fact={key[3]}" if key[3] else "")
        if bes:
            gm = geometric_mean(bes)
            p15, p85 = np.percentile(bes, 15), np.percentile(bes, 85)
            lines.append(f"{label}: {len(ok)}/{len(grp)} ok, backward_error "
                         f"gm={gm:.3e} [15%={p15:.3e}, 85%={p85:.3e}]")
        else:
            statuses = sorted({r["status"] for r in grp})
            lines.append(f"{label}: {len(ok)}/{len(grp)} ok ({', '.join(statuses)})")
    return lines


def run_experiment(spec: ExperimentSpec, out_path, jobs: int = 1,
                   timings: bool = False, echo=print):
    """Execute the sweep and write the CSV; returns the row dicts.

    Rows are emitted in deterministic spec order (sizes outer, seeds
    inner) regardless of completion order; repeated runs of the same
    spec produce byte-identical files unless ``timings`` is set.
    """
    units = [(n, seed) for n in spec.sizes() for seed in spec.seeds]
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_unit, spec, n, seed, timings) for n, seed in units]
            results = [f.result() for f in futures]
    else:
        results = [_run_unit(spec, n, seed, timings) for n, seed in units]

    rows = [row for chunk in results for row in chunk]
    columns = CSV_COLUMNS + (["wall_time_ms"] if timings else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    with open(out_path, "w", newline="") as fh:
        fh.write(buf.getvalue())

    for line in summarize(rows):
        echo(line)
    return rows
