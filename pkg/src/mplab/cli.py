"""mplab command line: run experiment sweeps, generate matrices, print
format constants, render report figures.

Exit codes: 0 success, 1 spec error, 2 I/O error, 3 all runs failed.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import MplabError, ParseError, UnsupportedField
from .experiments import ExperimentSpec, SpecError, run_experiment
from .generators import FAMILIES, MatrixGenerator, generate
from .mmio import write_matrix_market
from .prec import FORMATS, make_rng
from .sparse import CsrMatrix

EXIT_OK = 0
EXIT_SPEC = 1
EXIT_IO = 2
EXIT_ALL_FAILED = 3


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; remap to the spec-error code
    def error(self, message):
        raise _ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mplab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment spec file")
    run.add_argument("spec", help="key=value spec file with section headers")
    run.add_argument("--out", default="results.csv", help="output CSV path")
    run.add_argument("--seed", type=int, default=None,
                     help="override the spec's seed list with a single seed")
    run.add_argument("--jobs", type=int, default=1,
                     help="concurrent (size, seed) runs; output order is unchanged")
    run.add_argument("--plot", action="store_true",
                     help="render report figures next to the CSV")
    run.add_argument("--timings", action="store_true",
                     help="append a wall_time_ms column (breaks byte determinism)")

    gen = sub.add_parser("gen", help="generate a matrix")
    gen.add_argument("family", choices=FAMILIES)
    gen.add_argument("n", type=int)
    gen.add_argument("--m", type=int, default=None, help="rows for rectangular families")
    gen.add_argument("--kappa", type=float, default=None)
    gen.add_argument("--density", type=float, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--mm", default=None, help="write Matrix Market here (default stdout)")

    sub.add_parser("formats", help="print the emulated format constants")

    plot = sub.add_parser("plot", help="render report figures from a results CSV")
    plot.add_argument("csv", help="results CSV produced by 'mplab run'")
    plot.add_argument("--out-dir", default=None)
    return p


def _cmd_run(args) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    if args.seed is not None:
        spec.seeds = [args.seed]
    rows = run_experiment(spec, args.out, jobs=args.jobs, timings=args.timings)
    print(f"wrote {args.out} ({len(rows)} rows)")
    if args.plot:
        from .plots import render_report

        for path in render_report(args.out):
            print(f"wrote {path}")
    ok = [r for r in rows if r["status"] in ("ok", "converged")]
    if not ok:
        return EXIT_ALL_FAILED
    return EXIT_OK


def _cmd_gen(args) -> int:
    gen = MatrixGenerator(family=args.family, n=args.n, m=args.m,
                          kappa=args.kappa, density=args.density)
    a = generate(gen, make_rng(args.seed))
    if args.mm:
        write_matrix_market(args.mm, a, comment=f"{args.family} n={args.n} seed={args.seed}")
        print(f"wrote {args.mm}")
    else:
        csr = a if isinstance(a, CsrMatrix) else CsrMatrix.from_dense(np.asarray(a))
        sys.stdout.write("%%MatrixMarket matrix coordinate real general\n")
        sys.stdout.write(f"{csr.n_rows} {csr.n_cols} {csr.nnz}\n")
        rows = csr.row_of_nonzero()
        for i, j, v in zip(rows, csr.col_indices, csr.values):
            sys.stdout.write(f"{i + 1} {j + 1} {float(v)!r}\n")
    return EXIT_OK


def _cmd_formats(args) -> int:
    print(f"{'name':<6} {'exp':>4} {'sig':>4} {'u':>12} {'x_max':>13} {'x_min':>13}")
    for name, fmt in FORMATS.items():
        print(f"{name:<6} {fmt.exp_bits:>4} {fmt.sig_bits:>4} "
              f"{fmt.u:>12.3e} {fmt.x_max:>13.4e} {fmt.x_min:>13.4e}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import render_report

    for path in render_report(args.csv, args.out_dir):
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "formats":
            return _cmd_formats(args)
        if args.command == "plot":
            return _cmd_plot(args)
        return EXIT_SPEC
    except (SpecError, ValueError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (ParseError, UnsupportedField) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
