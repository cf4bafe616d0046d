"""Matrix Market ingestion and emission.

Reads coordinate and array files with real or integer fields, general or
symmetric symmetry (symmetric storage expands to full), sums duplicate
coordinate entries, and converts 1-based indices. Complex and pattern
fields are rejected. Writes coordinate real general files.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError, UnsupportedField
from .sparse import CsrMatrix

__all__ = ["load_matrix_market", "write_matrix_market"]


def load_matrix_market(path):
    """Parse a Matrix Market file into CsrMatrix (coordinate) or a dense
    ndarray (array format)."""
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise ParseError("empty file", line=1)

    header = lines[0].strip().split()
    if len(header) != 5 or header[0] != "%%MatrixMarket" or header[1].lower() != "matrix":
        raise ParseError("malformed MatrixMarket header", line=1)
    layout, field, symmetry = (h.lower() for h in header[2:5])
    if layout not in ("coordinate", "array"):
        raise ParseError(f"unknown layout {layout!r}", line=1)
    if field in ("complex", "pattern"):
        raise UnsupportedField(f"field {field!r} is not supported (real/integer only)")
    if field not in ("real", "integer", "double"):
        raise ParseError(f"unknown field {field!r}", line=1)
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedField(f"symmetry {symmetry!r} is not supported")

    # skip comments
    idx = 1
    while idx < len(lines) and lines[idx].lstrip().startswith("%"):
        idx += 1
    while idx < len(lines) and not lines[idx].strip():
        idx += 1
    if idx >= len(lines):
        raise ParseError("missing size line", line=len(lines))

    size_parts = lines[idx].split()
    size_line = idx + 1

    def parse_int(tok, line):
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"bad integer {tok!r}", line=line) from None

    def parse_real(tok, line):
        try:
            return float(tok)
        except ValueError:
            raise ParseError(f"bad number {tok!r}", line=line) from None

    if layout == "coordinate":
        if len(size_parts) != 3:
            raise ParseError("coordinate size line needs rows cols nnz", line=size_line)
        n_rows = parse_int(size_parts[0], size_line)
        n_cols = parse_int(size_parts[1], size_line)
        nnz = parse_int(size_parts[2], size_line)
        rows, cols, vals = [], [], []
        count = 0
        for off, raw in enumerate(lines[idx + 1:], start=size_line + 1):
            s = raw.strip()
            if not s or s.startswith("%"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise ParseError("coordinate entries need: row col value", line=off)
            i = parse_int(parts[0], off)
            j = parse_int(parts[1], off)
            v = parse_real(parts[2], off)
            if not (1 <= i <= n_rows and 1 <= j <= n_cols):
                raise ParseError(f"index ({i}, {j}) out of bounds", line=off)
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
            count += 1
            if symmetry == "symmetric" and i != j:
                rows.append(j - 1)
                cols.append(i - 1)
                vals.append(v)
        if count != nnz:
            raise ParseError(f"expected {nnz} entries, found {count}", line=len(lines))
        return CsrMatrix.from_coo(rows, cols, vals, (n_rows, n_cols))

    if len(size_parts) != 2:
        raise ParseError("array size line needs rows cols", line=size_line)
    n_rows = parse_int(size_parts[0], size_line)
    n_cols = parse_int(size_parts[1], size_line)
    entries = []
    for off, raw in enumerate(lines[idx + 1:], start=size_line + 1):
        s = raw.strip()
        if not s or s.startswith("%"):
            continue
        entries.append(parse_real(s.split()[0], off))
    if symmetry == "general":
        if len(entries) != n_rows * n_cols:
            raise ParseError(f"expected {n_rows * n_cols} entries, found {len(entries)}",
                             line=len(lines))
        return np.array(entries).reshape((n_cols, n_rows)).T   # column-major file
    # symmetric array stores the lower triangle column by column
    expect = n_rows * (n_rows + 1) // 2
    if len(entries) != expect:
        raise ParseError(f"expected {expect} entries, found {len(entries)}", line=len(lines))
    out = np.zeros((n_rows, n_cols))
    k = 0
    for j in range(n_cols):
        for i in range(j, n_rows):
            out[i, j] = entries[k]
            out[j, i] = entries[k]
            k += 1
    return out


def write_matrix_market(path, a, comment: str | None = None):
    """Write a CsrMatrix or dense array as coordinate real general."""
    if isinstance(a, np.ndarray):
        a = CsrMatrix.from_dense(a)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{a.n_rows} {a.n_cols} {a.nnz}\n")
        rows = a.row_of_nonzero()
        for i, j, v in zip(rows, a.col_indices, a.values):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
