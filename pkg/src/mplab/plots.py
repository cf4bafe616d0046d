"""Figure rendering for experiment result CSVs.

Each experiment kind gets one figure saved next to the CSV (PNG). The
plots mirror the sweeps: backward error vs size per quantization range
for integer LU, error vs condition number for refinement runs,
footprint/error trade-off for compression, and iteration comparisons for
the preconditioner study.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_report"]


def _read_rows(csv_path):
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def _f(row, key):
    v = row.get(key, "")
    return float(v) if v not in ("", None) else None


def _group(rows, key):
    out = {}
    for r in rows:
        out.setdefault(r.get(key, ""), []).append(r)
    return out


def _gm(vals):
    import numpy as np

    vals = [v for v in vals if v and v > 0]
    return float(np.exp(np.mean(np.log(vals)))) if vals else None


def _plot_qilu(rows, ax):
    for label, grp in sorted(_group(rows, "r").items()):
        pts = {}
        for r in grp:
            be = _f(r, "backward_error")
            if be is not None:
                pts.setdefault(int(r["n"]), []).append(be)
        if not pts:
            continue
        ns = sorted(pts)
        name = f"r={label}" if label else f"fact={grp[0].get('fact', '?')}"
        ax.plot(ns, [_gm(pts[n]) for n in ns], marker="o", label=name)
    ax.set_xlabel("matrix size n")
    ax.set_ylabel("backward error (geom. mean)")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("integer LU backward error")


def _plot_refinement(rows, ax, kind):
    pts = {}
    for r in rows:
        be = _f(r, "backward_error")
        if be is not None:
            pts.setdefault(int(r["n"]), []).append(be)
    ns = sorted(pts)
    if ns:
        ax.plot(ns, [_gm(pts[n]) for n in ns], marker="o", label="backward error")
    its = {}
    for r in rows:
        v = _f(r, "iterations")
        if v is not None:
            its.setdefault(int(r["n"]), []).append(v)
    ax2 = ax.twinx()
    ax2.plot(sorted(its), [sum(its[n]) / len(its[n]) for n in sorted(its)],
             marker="s", color="tab:orange", label="iterations")
    ax2.set_ylabel("iterations (mean)")
    ax.set_xlabel("matrix size n")
    ax.set_ylabel("backward error (geom. mean)")
    ax.set_yscale("log")
    ax.set_title(f"{kind} convergence")


def _plot_eig(rows, ax):
    seeds = [int(r["seed"]) for r in rows]
    res = [_f(r, "max_pair_residual") or float("nan") for r in rows]
    ax.bar(range(len(rows)), res)
    ax.set_xticks(range(len(rows)), [str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylabel("max pair residual")
    ax.set_yscale("log")
    ax.set_title("eigenpair refinement")


def _plot_compress(rows, ax):
    x = [_f(r, "bits_per_value") for r in rows]
    y = [_f(r, "max_reconstruction_error") for r in rows]
    pts = [(a, b) for a, b in zip(x, y) if a is not None and b is not None and b > 0]
    if pts:
        ax.scatter(*zip(*pts))
        ax.set_yscale("log")
    ax.set_xlabel("bits per value")
    ax.set_ylabel("max reconstruction error")
    ax.set_title("clustered compression trade-off")


def _plot_block_jacobi(rows, ax):
    idx = range(len(rows))
    ad = [_f(r, "pcg_iterations") or 0 for r in rows]
    full = [_f(r, "pcg_iterations_fp64") or 0 for r in rows]
    width = 0.4
    ax.bar([i - width / 2 for i in idx], ad, width, label="adaptive storage")
    ax.bar([i + width / 2 for i in idx], full, width, label="fp64 storage")
    ax.set_xticks(list(idx), [f"n={r['n']},s={r['seed']}" for r in rows],
                  rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("PCG iterations")
    ax.legend()
    ax.set_title("adaptive block-Jacobi vs fp64 storage")


def render_report(csv_path, out_dir=None):
    """Render one figure per experiment kind found in the CSV; returns
    the list of written paths."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir) if out_dir else csv_path.parent
    rows = _read_rows(csv_path)
    written = []
    for kind, grp in sorted(_group(rows, "kind").items()):
        if not kind:
            continue
        fig, ax = plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)
        if kind == "qilu":
            _plot_qilu(grp, ax)
        elif kind in ("ir", "gmres-ir", "lsq"):
            _plot_refinement(grp, ax, kind)
        elif kind == "eig":
            _plot_eig(grp, ax)
        elif kind == "spmv-compress":
            _plot_compress(grp, ax)
        elif kind == "block-jacobi":
            _plot_block_jacobi(grp, ax)
        else:
            plt.close(fig)
            continue
        out = out_dir / f"{csv_path.stem}_{kind}.png"
        fig.savefig(out, dpi=130)
        plt.close(fig)
        written.append(out)
    return written
