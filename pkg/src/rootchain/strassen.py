"""Linear-programming constructor for martingale couplings.

An independent existence oracle: a coupling of mu and nu with row
barycenters fixed at the source atoms exists exactly when mu precedes nu
in convex order, so LP feasibility cross-checks the call-price test with
none of its code.  The cost-minimizing variant generates extreme couplings
on demand; minimizing x*y yields maximally anti-correlated kernels, the
standard way to manufacture martingale kernels that fail the
Lipschitz-Markov certificate in negative tests.

The solver is a dense two-phase tableau simplex with Bland's rule.
Instances are tiny (support product capped at 10^4), so anti-cycling and
zero dependencies win over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import MartingaleKernel
from .measures import DiscreteMeasure, worst_call_violation

PIVOT_TOL = 1e-9
DEFAULT_CAP = 10**4


class StrassenError(ValueError):
    """Bad instance (cap exceeded, malformed marginals)."""


class StrassenNumericalError(RuntimeError):
    """Solver breakdown, distinct from genuine infeasibility."""


class InfeasibleError(StrassenError):
    """Raised by min_cost_coupling on an infeasible instance."""

    def __init__(self, certificate: "Infeasible") -> None:
        super().__init__(certificate.message)
        self.certificate = certificate


@dataclass(frozen=True)
class Infeasible:
    """No martingale coupling exists; carries the convex-order witness.

    ``violation`` is the largest call-price excess of the source over the
    target and ``strike`` its location; ``mean_gap`` the difference of
    means.  One of the two is positive whenever the instance is genuinely
    infeasible.
    """

    violation: float
    strike: float
    mean_gap: float
    message: str


@dataclass(frozen=True)
class TransportLP:
    """Coupling polytope of two finite marginals, optionally martingale.

    Row marginals live on ``x``, column marginals on ``y``; ``cost`` is an
    optional dense matrix.  ``solve`` returns a vertex of the polytope (a
    feasible one, or a cost-minimizing one when a cost is set).
    """

    mu_weights: np.ndarray
    nu_weights: np.ndarray
    x: np.ndarray
    y: np.ndarray
    cost: np.ndarray | None = None
    martingale: bool = True

    def __post_init__(self) -> None:
        mu_w = np.asarray(self.mu_weights, dtype=np.float64).ravel()
        nu_w = np.asarray(self.nu_weights, dtype=np.float64).ravel()
        x = np.asarray(self.x, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if mu_w.size != x.size or nu_w.size != y.size or x.size == 0 or y.size == 0:
            raise StrassenError("marginal weights and positions must align")
        if abs(mu_w.sum() - 1.0) > 1e-12 or abs(nu_w.sum() - 1.0) > 1e-12:
            raise StrassenError("marginals must each sum to 1 within 1e-12")
        cost = self.cost
        if cost is not None:
            cost = np.asarray(cost, dtype=np.float64)
            if cost.shape != (x.size, y.size):
                raise StrassenError("cost matrix shape must be (len(x), len(y))")
        for name, arr in (("mu_weights", mu_w), ("nu_weights", nu_w), ("x", x), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "cost", cost)

    @classmethod
    def from_measures(
        cls,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        cost=None,
        martingale: bool = True,
    ) -> "TransportLP":
        return cls(
            mu.weights, nu.weights, mu.atoms, nu.atoms, _cost_matrix(mu, nu, cost), martingale
        )

    def solve(self) -> np.ndarray | Infeasible:
        """Coupling matrix of shape (len(x), len(y)), or Infeasible."""
        m, n = self.x.size, self.y.size
        # Equality system over the flattened coupling gamma[i, j] -> i*n + j.
        rows: list[np.ndarray] = []
        rhs: list[float] = []
        for i in range(m):  # row sums = mu
            r = np.zeros(m * n)
            r[i * n : (i + 1) * n] = 1.0
            rows.append(r)
            rhs.append(float(self.mu_weights[i]))
        for j in range(n):  # column sums = nu
            r = np.zeros(m * n)
            r[j::n] = 1.0
            rows.append(r)
            rhs.append(float(self.nu_weights[j]))
        if self.martingale:
            scale = max(1.0, float(np.max(np.abs(self.y))))
            for i in range(m):  # row barycenters = x, scaled for conditioning
                r = np.zeros(m * n)
                r[i * n : (i + 1) * n] = self.y / scale
                rows.append(r)
                rhs.append(float(self.x[i] * self.mu_weights[i]) / scale)
        A = np.array(rows)
        b = np.array(rhs)
        cost = None if self.cost is None else self.cost.ravel()
        sol = _simplex(A, b, cost)
        if sol is None:
            return _certificate(self)
        gamma = sol.reshape(m, n)
        _check_solution(self, gamma)
        return gamma


def _certificate(lp: TransportLP) -> Infeasible:
    mu = DiscreteMeasure(lp.x, lp.mu_weights)
    nu = DiscreteMeasure(lp.y, lp.nu_weights)
    violation, strike = worst_call_violation(mu, nu)
    mean_gap = nu.mean() - mu.mean()
    if violation <= 1e-12 and abs(mean_gap) <= 1e-12:
        # The pair is in convex order, so a coupling exists; the solver
        # failing to find one is a numerical breakdown, not infeasibility.
        raise StrassenNumericalError(
            "solver reported infeasible on a convex-ordered pair"
        )
    msg = (
        f"no martingale coupling: call price at strike {strike:g} exceeds the "
        f"target's by {violation:.3e}; mean gap {mean_gap:.3e}"
    )
    return Infeasible(violation, strike, float(mean_gap), msg)


def _check_solution(lp: TransportLP, gamma: np.ndarray) -> None:
    if np.any(gamma < -1e-9):
        raise StrassenNumericalError("negative mass in the solved coupling")
    if np.max(np.abs(gamma.sum(axis=1) - lp.mu_weights)) > 1e-8:
        raise StrassenNumericalError("row marginals drifted beyond 1e-8")
    if np.max(np.abs(gamma.sum(axis=0) - lp.nu_weights)) > 1e-8:
        raise StrassenNumericalError("column marginals drifted beyond 1e-8")
    if lp.martingale:
        bary = gamma @ lp.y - lp.x * lp.mu_weights
        if np.max(np.abs(bary)) > 1e-8:
            raise StrassenNumericalError("row barycenters drifted beyond 1e-8")


# -- simplex core ----------------------------------------------------------


def _simplex(A: np.ndarray, b: np.ndarray, cost: np.ndarray | None) -> np.ndarray | None:
    """min cost.z over A z = b, z >= 0; None when infeasible.

    Two-phase dense tableau with Bland's rule throughout (entering: lowest
    eligible index; leaving: lowest basic index among the minimal ratios),
    which rules out cycling at the price of speed we do not need.
    """
    k, nreal = A.shape
    flip = b < 0.0
    A = np.where(flip[:, None], -A, A)
    b = np.where(flip, -b, b)

    # Phase 1: artificial basis, drive the artificial mass to zero.
    T = np.hstack([A, np.eye(k), b[:, None]])
    basis = list(range(nreal, nreal + k))
    phase1_cost = np.concatenate([np.zeros(nreal), np.ones(k)])
    max_iter = 2000 + 40 * (nreal + k)
    _bland(T, basis, phase1_cost, nreal + k, max_iter)
    if float(phase1_cost[basis] @ T[:, -1]) > 1e-9 * (1.0 + float(np.abs(b).sum())):
        return None

    # Pivot leftover artificials out of the basis; a row whose real part
    # vanished is a redundant constraint and gets dropped.
    keep = np.ones(k, dtype=bool)
    for r in range(k):
        if basis[r] < nreal:
            continue
        row = T[r, :nreal]
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > PIVOT_TOL:
            _pivot(T, basis, r, j)
        else:
            keep[r] = False
    T = np.hstack([T[keep][:, :nreal], T[keep][:, -1:]])
    basis = [v for v, k_ in zip(basis, keep) if k_]

    if cost is not None:
        _bland(T, basis, np.asarray(cost, dtype=np.float64), nreal, max_iter)

    z = np.zeros(nreal)
    z[basis] = T[:, -1]
    if np.any(z < -1e-9):
        raise StrassenNumericalError("basic solution left the nonnegative orthant")
    return np.maximum(z, 0.0)


def _bland(T: np.ndarray, basis: list[int], cost: np.ndarray, ncols: int, max_iter: int) -> None:
    for _ in range(max_iter):
        reduced = cost[:ncols] - cost[basis] @ T[:, :ncols]
        eligible = np.nonzero(reduced < -PIVOT_TOL)[0]
        if eligible.size == 0:
            return
        enter = int(eligible[0])
        col = T[:, enter]
        rows = np.nonzero(col > PIVOT_TOL)[0]
        if rows.size == 0:
            raise StrassenNumericalError("unbounded direction in a bounded polytope")
        ratios = T[rows, -1] / col[rows]
        best = float(ratios.min())
        near = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
        leave = int(min(near, key=lambda r: basis[r]))
        _pivot(T, basis, leave, enter)
    raise StrassenNumericalError("simplex iteration limit reached")


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    f = T[:, col].copy()
    f[row] = 0.0
    T -= f[:, None] * T[row][None, :]
    basis[row] = col


# -- public constructors ---------------------------------------------------


def feasible_coupling(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = DEFAULT_CAP
) -> MartingaleKernel | Infeasible:
    """Any martingale coupling of mu and nu, or Infeasible with a witness.

    Feasibility of this LP is equivalent to convex order, which makes the
    return value an oracle for the call-price checker built from entirely
    different arithmetic.
    """
    if len(mu) * len(nu) > cap:
        raise StrassenError(f"support product {len(mu) * len(nu)} exceeds cap {cap}")
    result = TransportLP.from_measures(mu, nu).solve()
    if isinstance(result, Infeasible):
        return result
    return _kernel_from_coupling(mu, nu, result)


def min_cost_coupling(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cost, cap: int = DEFAULT_CAP
) -> MartingaleKernel:
    """Cost-minimizing martingale coupling.

    ``cost`` is a callable c(x, y), a dense matrix, or None for pure
    feasibility.  Costs of the form f(x)*y are constant on the whole
    polytope (the barycenter constraints pin every row's y-mean), so they
    select an arbitrary vertex; to steer toward adversarial couplings use
    a cost nonlinear in y, e.g. c(x, y) = x*y**3, which fattens the lower
    row's tails and on suitable pairs yields kernels failing the
    Lipschitz-Markov certificate.  Raises InfeasibleError when no
    coupling exists.
    """
    if len(mu) * len(nu) > cap:
        raise StrassenError(f"support product {len(mu) * len(nu)} exceeds cap {cap}")
    result = TransportLP.from_measures(mu, nu, cost=cost).solve()
    if isinstance(result, Infeasible):
        raise InfeasibleError(result)
    return _kernel_from_coupling(mu, nu, result)


def _cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, cost) -> np.ndarray | None:
    """Normalize a callable c(x, y), a dense matrix, or None."""
    if cost is None:
        return None
    if callable(cost):
        C = cost(mu.atoms[:, None], nu.atoms[None, :])
        return np.ascontiguousarray(
            np.broadcast_to(np.asarray(C, dtype=np.float64), (len(mu), len(nu)))
        )
    return np.asarray(cost, dtype=np.float64)


def _kernel_from_coupling(
    mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: np.ndarray
) -> MartingaleKernel:
    targets = []
    for i in range(len(mu)):
        row = gamma[i]
        mass = row.sum()
        if mass <= 0.0:
            raise StrassenNumericalError("coupling row lost all mass")
        targets.append(DiscreteMeasure(nu.atoms, row / mass))
    return MartingaleKernel(mu.atoms, tuple(targets))
