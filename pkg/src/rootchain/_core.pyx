# cython: language_level=3
"""Compiled implementations of the hot loops.

Mirror of the pure-numpy backend, expression for expression: identical
association order, strict IEEE arithmetic (no fast-math in the build), so
the two backends return bit-identical arrays from identical inputs.
"""

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "compiled"


def obstacle_run(
    double[::1] v,
    double[::1] obstacle,
    cnp.int64_t[::1] support_idx,
    cnp.int64_t[::1] entry_step,
    double lam,
    double contact_tol,
    double stop_tol,
    cnp.int64_t max_steps,
):
    """Explicit obstacle steps 1..max_steps with early stop.

    Updates v and entry_step in place; the caller has already handled
    step 0 (boundary rows, initial contacts).  Returns the number of
    steps executed and the final residual on the support indices.
    """
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t n_sup = support_idx.shape[0]
    cdef double[::1] scratch = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef cnp.int64_t s, steps = 0
    cdef double t, gap, residual

    residual = obstacle[support_idx[0]] - v[support_idx[0]]
    for j in range(1, n_sup):
        gap = obstacle[support_idx[j]] - v[support_idx[j]]
        if gap > residual:
            residual = gap

    for s in range(1, max_steps + 1):
        for i in range(1, n - 1):
            t = v[i] + lam * ((v[i + 1] - 2.0 * v[i]) + v[i - 1])
            if t > obstacle[i]:
                t = obstacle[i]
            scratch[i] = t
        for i in range(1, n - 1):
            v[i] = scratch[i]
            if entry_step[i] < 0 and (obstacle[i] - v[i]) <= contact_tol:
                entry_step[i] = s
        residual = obstacle[support_idx[0]] - v[support_idx[0]]
        for j in range(1, n_sup):
            gap = obstacle[support_idx[j]] - v[support_idx[j]]
            if gap > residual:
                residual = gap
        steps = s
        if residual <= stop_tol:
            break
    return int(steps), float(residual)


def propagate_absorb(
    double[::1] p,
    double[::1] absorbed,
    cnp.int64_t[::1] entry_step,
    double lam,
    double om2l,
    cnp.int64_t n_steps,
):
    """Diffuse a mass vector with absorption, steps 1..n_steps.

    Moves off the grid fold back onto the edge point.  Mass at index i is
    absorbed at the first step s with 0 <= entry_step[i] <= s; step-0
    absorption is the caller's job.  Stops early once no live mass
    remains.  Returns the number of steps executed.
    """
    cdef Py_ssize_t n = p.shape[0]
    cdef double[::1] q = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    cdef cnp.int64_t s, steps = 0
    cdef bint any_live

    for s in range(1, n_steps + 1):
        for i in range(1, n - 1):
            q[i] = om2l * p[i] + lam * (p[i - 1] + p[i + 1])
        q[0] = (om2l * p[0] + lam * p[0]) + lam * p[1]
        q[n - 1] = (om2l * p[n - 1] + lam * p[n - 1]) + lam * p[n - 2]
        for i in range(n):
            p[i] = q[i]
        for i in range(n):
            if entry_step[i] >= 0 and entry_step[i] <= s and p[i] != 0.0:
                absorbed[i] += p[i]
                p[i] = 0.0
        steps = s
        any_live = False
        for i in range(n):
            if p[i] != 0.0:
                any_live = True
                break
        if not any_live:
            break
    return int(steps)


def walk_chunk(
    cnp.int64_t[::1] pos,
    cnp.int64_t[::1] out,
    double[:, ::1] U,
    cnp.int64_t[::1] entry_step,
    double lam,
    double two_lam,
    cnp.int64_t step0,
):
    """Advance walks through one chunk of uniforms.

    pos holds current grid indices, out holds -1 for live paths and the
    absorption index otherwise; both update in place.  Path j consumes
    U[j, k] at absolute step step0 + k; finished paths consume nothing.
    A draw below lam moves down, below two_lam up, else the walk stays;
    off-grid moves clamp to the edge.  Returns the live count.
    """
    cdef Py_ssize_t m = U.shape[0]
    cdef Py_ssize_t c = U.shape[1]
    cdef Py_ssize_t n = entry_step.shape[0]
    cdef Py_ssize_t j, k
    cdef cnp.int64_t pj, es, alive = 0
    cdef double u

    for j in range(m):
        if out[j] >= 0:
            continue
        pj = pos[j]
        for k in range(c):
            u = U[j, k]
            if u < lam:
                pj -= 1
            elif u < two_lam:
                pj += 1
            if pj < 0:
                pj = 0
            elif pj >= n:
                pj = n - 1
            es = entry_step[pj]
            if es >= 0 and es <= step0 + k:
                out[j] = pj
                break
        pos[j] = pj
        if out[j] < 0:
            alive += 1
    return int(alive)


def sample_rows(
    cnp.int64_t[::1] row_idx,
    cnp.int64_t[::1] offsets,
    double[::1] cumflat,
    double[::1] u,
    cnp.int64_t[::1] out,
):
    """Categorical draw per path from ragged row distributions.

    Row r occupies cumflat[offsets[r]:offsets[r+1]] (cumulative weights).
    out[j] receives the flat index of the first entry of row_idx[j]'s
    row whose cumulative weight exceeds u[j], clamped into the row.
    """
    cdef Py_ssize_t m = row_idx.shape[0]
    cdef Py_ssize_t j
    cdef cnp.int64_t r, lo, hi, a, b, mid

    for j in range(m):
        r = row_idx[j]
        lo = offsets[r]
        hi = offsets[r + 1]
        a = lo
        b = hi
        while a < b:
            mid = (a + b) // 2
            if cumflat[mid] <= u[j]:
                a = mid + 1
            else:
                b = mid
        if a >= hi:
            a = hi - 1
        out[j] = a
