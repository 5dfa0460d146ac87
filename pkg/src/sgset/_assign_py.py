"""Pure-Python rectangular assignment solver with a lexicographic tie-break.

Given an m x n cost matrix (m <= n), find an injective map row -> column
minimizing total cost; among all minimum-cost assignments, return the one
whose column sequence (row 0's column, row 1's column, ...) is
lexicographically smallest.

Phase 1 is the classic O(m^2 n) shortest-augmenting-path algorithm with
potentials. Its byproduct, the dual potentials (u, v), characterize ALL
optimal assignments, not just the one it found: by complementary slackness an
assignment is optimal iff it uses only tight edges (cost[i][j] == u[i] + v[j])
and covers every column whose potential v[j] is negative. Phase 2 exploits
that: walk rows in order and greedily commit the smallest tight column that
still leaves the remaining rows completable (a matching saturating all
remaining rows exists) and the remaining negative columns coverable. The two
feasibility checks are each a Kuhn augmenting-path matching; if both hold
separately a single matching satisfying both exists (Mendelsohn-Dulmage), so
the greedy never dead-ends.

Tight edges are detected with a tolerance scaled to the cost magnitude; for
integer-valued costs the potentials stay exactly integral and the detection is
exact, which is what the tie-break tests rely on.

sgset.assign wraps this module (or its compiled twin _assign_ext) with input
validation; call that instead.
"""

from __future__ import annotations

import numpy as np

INF = float("inf")


def solve_rectangular(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (row_to_col array of length m, total cost). cost: m x n, m <= n."""
    c = np.ascontiguousarray(cost, dtype=np.float64)
    m, n = c.shape
    if m == 0:
        return np.empty(0, dtype=np.int64), 0.0

    u, v = _solve_potentials(c, m, n)
    assignment = _lexicographic_refine(c, m, n, u, v)
    total = float(sum(c[i, assignment[i]] for i in range(m)))
    return np.asarray(assignment, dtype=np.int64), total


def _solve_potentials(c: np.ndarray, m: int, n: int) -> tuple[list[float], list[float]]:
    """Shortest-augmenting-path Hungarian; returns optimal dual potentials."""
    # 1-based arrays with a virtual column 0, the standard formulation.
    u = [0.0] * (m + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)          # p[j] = row matched to column j
    way = [0] * (n + 1)
    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    return u[1:], v[1:]


def _lexicographic_refine(c: np.ndarray, m: int, n: int,
                          u: list[float], v: list[float]) -> list[int]:
    scale = float(np.max(np.abs(c))) if c.size else 1.0
    tol = 1e-9 * max(1.0, scale)
    tight = [[j for j in range(n) if c[i, j] - u[i] - v[j] <= tol]
             for i in range(m)]
    neg_cols = [j for j in range(n) if v[j] < -tol]

    # Common fast path: unique optimum means one tight column per row.
    if all(len(t) == 1 for t in tight):
        cols = [t[0] for t in tight]
        if len(set(cols)) == m:
            return cols

    tight_sets = [set(t) for t in tight]

    def rows_saturable(start_row: int, banned: set[int]) -> bool:
        match_col: dict[int, int] = {}

        def try_row(i: int, visited: set[int]) -> bool:
            for j in tight[i]:
                if j in banned or j in visited:
                    continue
                visited.add(j)
                if j not in match_col or try_row(match_col[j], visited):
                    match_col[j] = i
                    return True
            return False

        for i in range(start_row, m):
            if not try_row(i, set()):
                return False
        return True

    def neg_saturable(start_row: int, banned: set[int]) -> bool:
        remaining = [j for j in neg_cols if j not in banned]
        match_row: dict[int, int] = {}

        def try_col(j: int, visited: set[int]) -> bool:
            for i in range(start_row, m):
                if j not in tight_sets[i] or i in visited:
                    continue
                visited.add(i)
                if i not in match_row or try_col(match_row[i], visited):
                    match_row[i] = j
                    return True
            return False

        for j in remaining:
            if not try_col(j, set()):
                return False
        return True

    used: set[int] = set()
    assignment = [-1] * m
    for i in range(m):
        for j in tight[i]:
            if j in used:
                continue
            banned = used | {j}
            if rows_saturable(i + 1, banned) and neg_saturable(i + 1, banned):
                assignment[i] = j
                used.add(j)
                break
        if assignment[i] < 0:  # pragma: no cover - would contradict duality
            raise RuntimeError("no feasible tight column; potentials inconsistent")
    return assignment
