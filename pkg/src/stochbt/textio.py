"""Plain-text matrix blocks and CSV output.

Matrices are stored as::

    MATRIX <name> <rows> <cols>
    <row of space-separated decimals>
    ...

with every value written to 17 significant digits so that a round trip
through the file reproduces the double exactly.
"""

import io
import os

import numpy as np

from ._errors import DimensionError

__all__ = [
    "format_float",
    "write_matrix",
    "read_matrix_blocks",
    "write_matrix_file",
    "read_matrix_file",
    "write_csv",
]


def format_float(x):
    """Format a float with 17 significant digits."""
    return f"{float(x):.16e}"


def write_matrix(stream, name, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"matrix {name!r} must be two-dimensional")
    rows, cols = M.shape
    stream.write(f"MATRIX {name} {rows} {cols}\n")
    for row in M:
        stream.write(" ".join(format_float(v) for v in row))
        stream.write("\n")


def read_matrix_blocks(lines):
    """Parse MATRIX blocks from an iterable of lines.

    Returns a list of ``(name, array)`` pairs in file order. Blank lines
    and lines starting with ``#`` are skipped.
    """
    blocks = []
    it = (ln.strip() for ln in lines)
    it = (ln for ln in it if ln and not ln.startswith("#"))
    for line in it:
        parts = line.split()
        if parts[0] != "MATRIX" or len(parts) != 4:
            raise ValueError(f"expected 'MATRIX <name> <rows> <cols>', got {line!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        data = np.empty((rows, cols))
        for i in range(rows):
            try:
                row = next(it)
            except StopIteration:
                raise ValueError(f"matrix {name!r} truncated after {i} rows") from None
            vals = row.split()
            if len(vals) != cols:
                raise ValueError(f"matrix {name!r} row {i} has {len(vals)} entries, expected {cols}")
            data[i] = [float(v) for v in vals]
        blocks.append((name, data))
    return blocks


def write_matrix_file(path, matrices, header=None):
    """Write ``matrices`` (mapping or list of pairs) to ``path``."""
    items = matrices.items() if hasattr(matrices, "items") else matrices
    with open(path, "w", newline="\n") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        for name, M in items:
            write_matrix(f, name, M)


def read_matrix_file(path):
    """Read all MATRIX blocks of ``path`` into a dict (later names win)."""
    with open(path) as f:
        return dict(read_matrix_blocks(f))


def write_csv(path_or_stream, header, rows):
    """Write a comma-separated table with LF line endings.

    Floats are written with 17 significant digits, everything else with
    ``str``.
    """

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format_float(v)
        return str(v)

    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w", newline="\n") as f:
            write_csv(f, header, rows)
        return
    out = path_or_stream
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(cell(v) for v in row) + "\n")


def csv_text(header, rows):
    buf = io.StringIO()
    write_csv(buf, header, rows)
    return buf.getvalue()
