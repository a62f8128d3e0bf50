"""Shared generators and oracles for the test suite.

The brute-force transport solvers here are deliberately independent of the
package's own simplex: they call scipy's LP so that w1 and the martingale
coupling routines are checked against a second implementation.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linprog

from rootchain import DiscreteMeasure

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture
def record_criterion():
    def _record(n: int, ok: bool, detail: str) -> None:
        word = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append((n, f"criterion {n:2d} {word}  {detail}"))

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def random_measure(rng: np.random.Generator, max_atoms: int = 6) -> DiscreteMeasure:
    """Random measure with distinct quarter-integer atoms in [-2, 2]."""
    k = int(rng.integers(1, max_atoms + 1))
    atoms = rng.choice(np.arange(-8, 9) * 0.25, size=k, replace=False)
    weights = rng.dirichlet(np.ones(k))
    return DiscreteMeasure(np.sort(atoms), weights[np.argsort(atoms)])


def dilation_of(
    mu: DiscreteMeasure, rng: np.random.Generator, step: float = 0.25, max_k: int = 3
) -> DiscreteMeasure:
    """Mean-preserving spread of mu: each atom splits into x +- k*step.

    The result dominates mu in convex order by construction, which is how
    the tests manufacture guaranteed-feasible pairs.
    """
    atoms: list[float] = []
    weights: list[float] = []
    for x, w in zip(mu.atoms, mu.weights):
        k = int(rng.integers(0, max_k + 1))
        if k == 0:
            atoms.append(float(x))
            weights.append(float(w))
        else:
            s = k * step
            atoms.extend([float(x) - s, float(x) + s])
            weights.extend([float(w) / 2, float(w) / 2])
    order = np.argsort(atoms)
    return DiscreteMeasure(np.asarray(atoms)[order], np.asarray(weights)[order])


def lp_transport_cost(alpha: DiscreteMeasure, beta: DiscreteMeasure) -> float:
    """Optimal-coupling W1 via scipy's LP, the oracle for the exact formula."""
    m, n = len(alpha), len(beta)
    cost = np.abs(alpha.atoms[:, None] - beta.atoms[None, :]).ravel()
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n : (i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([alpha.weights, beta.weights])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def lp_martingale_cost(
    mu: DiscreteMeasure, nu: DiscreteMeasure, cost: np.ndarray
) -> float | None:
    """Optimal martingale-coupling cost via scipy, or None when infeasible."""
    m, n = len(mu), len(nu)
    a_eq = np.zeros((2 * m + n, m * n))
    b_eq = np.zeros(2 * m + n)
    for i in range(m):
        a_eq[i, i * n : (i + 1) * n] = 1.0
        b_eq[i] = mu.weights[i]
        a_eq[m + i, i * n : (i + 1) * n] = nu.atoms
        b_eq[m + i] = mu.atoms[i] * mu.weights[i]
    for j in range(n):
        a_eq[2 * m + j, j::n] = 1.0
        b_eq[2 * m + j] = nu.weights[j]
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 2:
        return None
    assert res.status == 0, res.message
    return float(res.fun)
