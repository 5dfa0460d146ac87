# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of _assign_py: same algorithm, same tie-break, typed loops.

Kept line-for-line parallel with the pure version where possible; the
agreement test in tests/test_assign.py runs both backends over the same
matrices (including tie-heavy integer ones) and requires identical output.
See _assign_py's docstring for how and why the algorithm works.
"""

import numpy as np

INF = float("inf")


def solve_rectangular(cost):
    """Return (row_to_col int64 array of length m, total cost). m <= n."""
    c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t n = c.shape[1]
    if m == 0:
        return np.empty(0, dtype=np.int64), 0.0

    u = np.zeros(m + 1, dtype=np.float64)
    v = np.zeros(n + 1, dtype=np.float64)
    _solve_potentials(c, u, v, m, n)
    assignment = _lexicographic_refine(c, m, n, u[1:], v[1:])

    cdef double total = 0.0
    cdef Py_ssize_t i
    cdef long long[::1] av = assignment
    cdef double[:, ::1] cv = c
    for i in range(m):
        total += cv[i, av[i]]
    return assignment, total


cdef void _solve_potentials(double[:, ::1] c, double[::1] u, double[::1] v,
                            Py_ssize_t m, Py_ssize_t n):
    """Shortest-augmenting-path Hungarian; leaves optimal duals in u, v."""
    p_arr = np.zeros(n + 1, dtype=np.int64)
    way_arr = np.zeros(n + 1, dtype=np.int64)
    minv_arr = np.empty(n + 1, dtype=np.float64)
    used_arr = np.empty(n + 1, dtype=np.uint8)
    cdef long long[::1] p = p_arr
    cdef long long[::1] way = way_arr
    cdef double[::1] minv = minv_arr
    cdef unsigned char[::1] used = used_arr
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0

    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INF
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INF
            j1 = 0
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - ui0 - v[j]
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


cdef bint _try_row(Py_ssize_t i, long long[::1] tight_data,
                   long long[::1] tight_start, unsigned char[::1] banned,
                   unsigned char[::1] visited, long long[::1] match_col):
    cdef Py_ssize_t idx, j
    for idx in range(tight_start[i], tight_start[i + 1]):
        j = tight_data[idx]
        if banned[j] or visited[j]:
            continue
        visited[j] = 1
        if match_col[j] < 0 or _try_row(match_col[j], tight_data, tight_start,
                                        banned, visited, match_col):
            match_col[j] = i
            return True
    return False


cdef bint _rows_saturable(Py_ssize_t start_row, Py_ssize_t m, Py_ssize_t n,
                          long long[::1] tight_data, long long[::1] tight_start,
                          unsigned char[::1] banned):
    match_arr = np.full(n, -1, dtype=np.int64)
    visited_arr = np.empty(n, dtype=np.uint8)
    cdef long long[::1] match_col = match_arr
    cdef unsigned char[::1] visited = visited_arr
    cdef Py_ssize_t i, j
    for i in range(start_row, m):
        for j in range(n):
            visited[j] = 0
        if not _try_row(i, tight_data, tight_start, banned, visited, match_col):
            return False
    return True


cdef bint _try_col(Py_ssize_t j, Py_ssize_t start_row, Py_ssize_t m,
                   unsigned char[:, ::1] tight_mask,
                   unsigned char[::1] visited_rows, long long[::1] match_row):
    cdef Py_ssize_t i
    for i in range(start_row, m):
        if not tight_mask[i, j] or visited_rows[i]:
            continue
        visited_rows[i] = 1
        if match_row[i] < 0 or _try_col(match_row[i], start_row, m, tight_mask,
                                        visited_rows, match_row):
            match_row[i] = j
            return True
    return False


cdef bint _neg_saturable(Py_ssize_t start_row, Py_ssize_t m, Py_ssize_t n,
                         unsigned char[:, ::1] tight_mask,
                         long long[::1] neg_cols, Py_ssize_t n_neg,
                         unsigned char[::1] banned):
    match_arr = np.full(m, -1, dtype=np.int64)
    visited_arr = np.empty(m, dtype=np.uint8)
    cdef long long[::1] match_row = match_arr
    cdef unsigned char[::1] visited = visited_arr
    cdef Py_ssize_t k, i, j
    for k in range(n_neg):
        j = neg_cols[k]
        if banned[j]:
            continue
        for i in range(m):
            visited[i] = 0
        if not _try_col(j, start_row, m, tight_mask, visited, match_row):
            return False
    return True


def _lexicographic_refine(c, Py_ssize_t m, Py_ssize_t n, u, v):
    cdef double[:, ::1] cv = c
    cdef double[::1] uv = np.ascontiguousarray(u)
    cdef double[::1] vv = np.ascontiguousarray(v)
    cdef double scale = float(np.max(np.abs(c))) if c.size else 1.0
    cdef double tol = 1e-9 * (scale if scale > 1.0 else 1.0)
    cdef Py_ssize_t i, j, count

    tight_mask_arr = np.zeros((m, n), dtype=np.uint8)
    tight_start_arr = np.zeros(m + 1, dtype=np.int64)
    cdef unsigned char[:, ::1] tight_mask = tight_mask_arr
    cdef long long[::1] tight_start = tight_start_arr
    count = 0
    for i in range(m):
        tight_start[i] = count
        for j in range(n):
            if cv[i, j] - uv[i] - vv[j] <= tol:
                tight_mask[i, j] = 1
                count += 1
    tight_start[m] = count
    tight_data_arr = np.empty(count, dtype=np.int64)
    cdef long long[::1] tight_data = tight_data_arr
    count = 0
    for i in range(m):
        for j in range(n):
            if tight_mask[i, j]:
                tight_data[count] = j
                count += 1

    neg_arr = np.array([j for j in range(n) if vv[j] < -tol], dtype=np.int64)
    cdef long long[::1] neg_cols = neg_arr
    cdef Py_ssize_t n_neg = neg_arr.shape[0]

    # Fast path: unique optimum, one tight column per row, all distinct.
    assignment_arr = np.full(m, -1, dtype=np.int64)
    cdef long long[::1] assignment = assignment_arr
    if tight_start[m] == m:
        seen_arr = np.zeros(n, dtype=np.uint8)
        seen = seen_arr
        for i in range(m):
            j = tight_data[tight_start[i]]
            if seen_arr[j]:
                break
            seen_arr[j] = 1
            assignment[i] = j
        else:
            return assignment_arr
        assignment_arr.fill(-1)

    banned_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] banned = banned_arr
    cdef Py_ssize_t idx
    for i in range(m):
        for idx in range(tight_start[i], tight_start[i + 1]):
            j = tight_data[idx]
            if banned[j]:
                continue
            banned[j] = 1
            if (_rows_saturable(i + 1, m, n, tight_data, tight_start, banned)
                    and _neg_saturable(i + 1, m, n, tight_mask, neg_cols,
                                       n_neg, banned)):
                assignment[i] = j
                break
            banned[j] = 0
        if assignment[i] < 0:
            raise RuntimeError("no feasible tight column; potentials inconsistent")
    return assignment_arr
