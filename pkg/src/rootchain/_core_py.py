"""Pure-numpy implementations of the hot loops.

Fallback for the compiled extension, selected at import time by the
backend module.  Every arithmetic expression here mirrors the compiled
code operation for operation, with the same association order and no
fused or reordered arithmetic, so both backends produce bit-identical
results from identical inputs.  Positions are integer grid indices and
the random numbers arrive precomputed from the caller, which keeps the
only float operations shared comparisons and the shared stencil.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def obstacle_run(
    v: np.ndarray,
    obstacle: np.ndarray,
    support_idx: np.ndarray,
    entry_step: np.ndarray,
    lam: float,
    contact_tol: float,
    stop_tol: float,
    max_steps: int,
) -> tuple[int, float]:
    """Explicit obstacle steps 1..max_steps with early stop.

    Updates v and entry_step in place; the caller has already handled
    step 0 (boundary rows, initial contacts).  Returns the number of
    steps executed and the final residual on the support indices.
    """
    residual = float(np.max(obstacle[support_idx] - v[support_idx]))
    steps = 0
    inner_entry = entry_step[1:-1]
    for s in range(1, max_steps + 1):
        vh = v[1:-1] + lam * ((v[2:] - 2.0 * v[1:-1]) + v[:-2])
        np.minimum(vh, obstacle[1:-1], out=vh)
        v[1:-1] = vh
        newly = (inner_entry < 0) & ((obstacle[1:-1] - v[1:-1]) <= contact_tol)
        inner_entry[newly] = s
        residual = float(np.max(obstacle[support_idx] - v[support_idx]))
        steps = s
        if residual <= stop_tol:
            break
    return steps, residual


def propagate_absorb(
    p: np.ndarray,
    absorbed: np.ndarray,
    entry_step: np.ndarray,
    lam: float,
    om2l: float,
    n_steps: int,
) -> int:
    """Diffuse a mass vector with absorption, steps 1..n_steps.

    Moves off the grid fold back onto the edge point.  Mass at index i is
    absorbed at the first step s with 0 <= entry_step[i] <= s; step-0
    absorption is the caller's job.  Stops early once no live mass
    remains.  Returns the number of steps executed.
    """
    n = p.size
    can_absorb = entry_step >= 0
    q = np.empty_like(p)
    steps = 0
    for s in range(1, n_steps + 1):
        q[1:-1] = om2l * p[1:-1] + lam * (p[:-2] + p[2:])
        q[0] = (om2l * p[0] + lam * p[0]) + lam * p[1]
        q[n - 1] = (om2l * p[n - 1] + lam * p[n - 1]) + lam * p[n - 2]
        p[:] = q
        hit = can_absorb & (entry_step <= s) & (p != 0.0)
        absorbed[hit] += p[hit]
        p[hit] = 0.0
        steps = s
        if not p.any():
            break
    return steps


def walk_chunk(
    pos: np.ndarray,
    out: np.ndarray,
    U: np.ndarray,
    entry_step: np.ndarray,
    lam: float,
    two_lam: float,
    step0: int,
) -> int:
    """Advance walks through one chunk of uniforms.

    pos holds current grid indices, out holds -1 for live paths and the
    absorption index otherwise; both update in place.  Path j consumes
    U[j, k] at absolute step step0 + k; finished paths consume nothing.
    A draw below lam moves down, below two_lam up, else the walk stays;
    off-grid moves clamp to the edge.  Returns the live count.
    """
    n = entry_step.size
    alive = out < 0
    for k in range(U.shape[1]):
        if not alive.any():
            break
        u = U[alive, k]
        p = pos[alive]
        step = np.where(u < lam, -1, np.where(u < two_lam, 1, 0))
        p = np.clip(p + step, 0, n - 1)
        pos[alive] = p
        es = entry_step[p]
        hit = (es >= 0) & (es <= step0 + k)
        if hit.any():
            rows = np.nonzero(alive)[0][hit]
            out[rows] = p[hit]
            alive[rows] = False
    return int(np.count_nonzero(out < 0))


def sample_rows(
    row_idx: np.ndarray,
    offsets: np.ndarray,
    cumflat: np.ndarray,
    u: np.ndarray,
    out: np.ndarray,
) -> None:
    """Categorical draw per path from ragged row distributions.

    Row r occupies cumflat[offsets[r]:offsets[r+1]] (cumulative weights).
    out[j] receives the flat index of the first entry of row_idx[j]'s
    row whose cumulative weight exceeds u[j], clamped into the row.
    """
    for r in np.unique(row_idx):
        sel = row_idx == r
        lo, hi = int(offsets[r]), int(offsets[r + 1])
        j = np.searchsorted(cumflat[lo:hi], u[sel], side="right")
        out[sel] = lo + np.minimum(j, hi - lo - 1)
