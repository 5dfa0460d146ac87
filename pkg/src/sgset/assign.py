"""Minimum-cost rectangular assignment, the matching kernel of this package.

Two interchangeable backends implement the same algorithm (see _assign_py for
the full description, including the lexicographic tie-break): a Cython
extension built at install time, and a pure-Python fallback. The extension is
preferred when importable; setting SGSET_PURE_ASSIGN=1 forces the fallback,
which the agreement tests and the benchmark use to pit one against the other.

This wrapper owns input validation so the backends can assume clean input.
"""

from __future__ import annotations

import os

import numpy as np

from .tensor import NumericError, ShapeError

if os.environ.get("SGSET_PURE_ASSIGN") == "1":
    from ._assign_py import solve_rectangular as _solve
    BACKEND = "python"
else:
    try:
        from ._assign_ext import solve_rectangular as _solve
        BACKEND = "compiled"
    except ImportError:
        from ._assign_py import solve_rectangular as _solve
        BACKEND = "python"


def solve(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Assign each row of an m x n cost matrix (m <= n) to a distinct column.

    Returns (row_to_col, total): row_to_col[i] is the column assigned to row
    i, total is the summed cost. The assignment has minimum total cost; ties
    are broken to the lexicographically smallest (row 0's column, row 1's
    column, ...) sequence, so equal inputs always produce equal outputs.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {c.shape}")
    m, n = c.shape
    if m > n:
        raise ShapeError(f"need at least as many columns as rows, got {m}x{n}")
    if not np.all(np.isfinite(c)):
        raise NumericError("cost matrix contains non-finite entries")
    return _solve(c)
