"""Finitely supported probability measures on the real line.

Exact arithmetic for the quantities everything else is built on: moments,
distribution and quantile functions, potential functions, call prices, the
L1 Wasserstein distance, convex order, first-order stochastic dominance,
and mean-preserving projection onto a uniform grid.  All measures are
immutable after construction and every operation is a pure function, so
values can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

# Default tolerances; every comparison accepts an override per call.
MASS_TOL = 1e-12
MEAN_TOL = 1e-9
ORDER_TOL = 1e-9
WEIGHT_FLOOR = 1e-15

# Atoms closer to a grid node than this fraction of the spacing are snapped
# onto it instead of producing a spurious two-point split.
_SNAP_TOL = 1e-12


class MeasureError(ValueError):
    """Invalid measure data (construction or deserialization)."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure with finitely many atoms on the real line.

    ``atoms`` is strictly increasing, every weight is positive and the
    weights sum to one.  Construction sorts the atoms, merges exact
    duplicates, drops weights below ``WEIGHT_FLOOR`` and renormalizes, so
    the invariants hold machine-checkably afterwards.  Input weights must
    already sum to one within ``MASS_TOL`` relative slack of 1e-9; junk
    totals are rejected rather than silently rescaled.
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        atoms = np.asarray(self.atoms, dtype=np.float64).ravel()
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if atoms.size == 0:
            raise MeasureError("measure needs at least one atom")
        if atoms.size != weights.size:
            raise MeasureError("atoms and weights must have equal length")
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(weights)):
            raise MeasureError("atoms and weights must be finite")
        if np.any(weights < 0.0):
            raise MeasureError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise MeasureError(f"weights sum to {total!r}, expected 1")

        order = np.argsort(atoms, kind="stable")
        atoms = atoms[order]
        weights = weights[order]
        # Merge exact duplicates (grid-projected data produces them).
        if atoms.size > 1 and np.any(np.diff(atoms) == 0.0):
            uniq, inverse = np.unique(atoms, return_inverse=True)
            merged = np.zeros_like(uniq)
            np.add.at(merged, inverse, weights)
            atoms, weights = uniq, merged
        keep = weights >= WEIGHT_FLOOR
        if not np.any(keep):
            raise MeasureError("all weights below the weight floor")
        atoms = atoms[keep]
        weights = weights[keep]
        weights = weights / weights.sum()

        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    # -- basic structure ---------------------------------------------------

    def __len__(self) -> int:
        return int(self.atoms.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return np.array_equal(self.atoms, other.atoms) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None  # mutable-free but compared by value

    def __repr__(self) -> str:
        if len(self) <= 4:
            pairs = ", ".join(
                f"{w:.6g}@{x:.6g}" for x, w in zip(self.atoms, self.weights)
            )
            return f"DiscreteMeasure({pairs})"
        return f"DiscreteMeasure(<{len(self)} atoms on [{self.atoms[0]:.6g}, {self.atoms[-1]:.6g}]>)"

    @classmethod
    def point_mass(cls, x: float) -> "DiscreteMeasure":
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def uniform(cls, atoms: Iterable[float]) -> "DiscreteMeasure":
        arr = np.asarray(list(atoms), dtype=np.float64)
        return cls(arr, np.full(arr.size, 1.0 / arr.size))

    @classmethod
    def empirical(cls, samples: np.ndarray) -> "DiscreteMeasure":
        """Empirical measure of a sample vector (exact counts over n)."""
        values, counts = np.unique(np.asarray(samples, dtype=np.float64), return_counts=True)
        return cls(values, counts / counts.sum())

    # -- scalar functionals ------------------------------------------------

    def mean(self) -> float:
        return float(self.weights @ self.atoms)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.atoms - m) ** 2)

    def cdf(self, x) -> float | np.ndarray:
        """Right-continuous distribution function F(x) = mu((-inf, x])."""
        xs = np.asarray(x, dtype=np.float64)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.atoms, xs, side="right")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.isscalar(x) or xs.ndim == 0 else out

    def quantile(self, p: float) -> float:
        """Left-continuous generalized inverse inf{x : F(x) >= p}, p in (0, 1]."""
        if not 0.0 < p <= 1.0:
            raise ValueError(f"quantile level must be in (0, 1], got {p!r}")
        cum = np.cumsum(self.weights)
        idx = int(np.searchsorted(cum, p, side="left"))
        idx = min(idx, len(self) - 1)
        return float(self.atoms[idx])

    def potential(self, x) -> float | np.ndarray:
        """P(x) = integral of |x - y| d mu(y); convex, piecewise linear."""
        xs = np.asarray(x, dtype=np.float64)
        diff = np.abs(xs[..., None] - self.atoms)
        out = diff @ self.weights
        return float(out) if np.isscalar(x) or xs.ndim == 0 else out

    def call_price(self, strike) -> float | np.ndarray:
        """Integral of (y - K)+ d mu(y)."""
        ks = np.asarray(strike, dtype=np.float64)
        payoff = np.maximum(self.atoms - ks[..., None], 0.0)
        out = payoff @ self.weights
        return float(out) if np.isscalar(strike) or ks.ndim == 0 else out

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict, mass_tol: float = 1e-9) -> "DiscreteMeasure":
        """Strict reader for the wire format {"atoms": [...], "weights": [...]}.

        Rejects non-increasing atoms and total mass differing from one by
        more than ``mass_tol`` (default looser than MASS_TOL so hand-written
        decimal files load).
        """
        if not isinstance(data, dict) or "atoms" not in data or "weights" not in data:
            raise MeasureError("expected an object with 'atoms' and 'weights'")
        atoms = np.asarray(data["atoms"], dtype=np.float64)
        weights = np.asarray(data["weights"], dtype=np.float64)
        if atoms.ndim != 1 or atoms.shape != weights.shape or atoms.size == 0:
            raise MeasureError("'atoms' and 'weights' must be equal-length nonempty lists")
        if atoms.size > 1 and np.any(np.diff(atoms) <= 0.0):
            raise MeasureError("'atoms' must be strictly increasing")
        if np.any(weights <= 0.0):
            raise MeasureError("'weights' must be positive")
        total = float(weights.sum())
        if abs(total - 1.0) > mass_tol:
            raise MeasureError(f"total mass {total!r} differs from 1 beyond tolerance")
        return cls(atoms, weights)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MeasureError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


# -- two-measure operations ------------------------------------------------


def _union_atoms(alpha: DiscreteMeasure, beta: DiscreteMeasure) -> np.ndarray:
    return np.union1d(alpha.atoms, beta.atoms)


def w1(alpha: DiscreteMeasure, beta: DiscreteMeasure) -> float:
    """Exact L1 Wasserstein distance, integral of |F_alpha - F_beta|.

    Both CDFs are steps changing only on the union of atoms, so the
    integral is a finite sum over consecutive union positions.  Equals the
    coupling infimum and the Lip-1 dual supremum.
    """
    grid = _union_atoms(alpha, beta)
    if grid.size == 1:
        return 0.0
    fa = alpha.cdf(grid[:-1])
    fb = beta.cdf(grid[:-1])
    return float(np.abs(fa - fb) @ np.diff(grid))


def convex_order(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = ORDER_TOL) -> bool:
    """True iff mu precedes nu in convex order (within tol).

    Checked exactly for piecewise-linear call functions: equal means
    (matching asymptotes) plus nonnegativity of call_nu - call_mu at every
    kink of either function.
    """
    if abs(mu.mean() - nu.mean()) > tol:
        return False
    kinks = _union_atoms(mu, nu)
    return bool(np.all(mu.call_price(kinks) <= nu.call_price(kinks) + tol))


def worst_call_violation(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, float]:
    """Largest call-price violation of mu <= nu and its location.

    Returns (violation, strike); violation <= 0 means no kink violates.
    """
    kinks = _union_atoms(mu, nu)
    gaps = mu.call_price(kinks) - nu.call_price(kinks)
    i = int(np.argmax(gaps))
    return float(gaps[i]), float(kinks[i])


def fsd(alpha: DiscreteMeasure, beta: DiscreteMeasure, tol: float = ORDER_TOL) -> bool:
    """First-order stochastic dominance: F_alpha >= F_beta - tol pointwise.

    Both CDFs are steps changing only on the union of atoms, so checking
    there is sufficient.
    """
    grid = _union_atoms(alpha, beta)
    return bool(np.all(alpha.cdf(grid) >= beta.cdf(grid) - tol))


def project_to_grid(mu: DiscreteMeasure, grid) -> DiscreteMeasure:
    """Project onto a uniform grid, splitting each atom mean-preservingly.

    Each atom's mass goes to the two nearest grid nodes with the unique
    split that keeps the mean; atoms already on a node are left alone.
    ``grid`` needs attributes ``x_min``, ``x_max`` and ``h`` (a GridSpec
    works).  Raises if the support leaves the grid range.
    """
    x_min, x_max, h = float(grid.x_min), float(grid.x_max), float(grid.h)
    n_cells = int(round((x_max - x_min) / h))
    if mu.atoms[0] < x_min - 1e-12 or mu.atoms[-1] > x_max + 1e-12:
        raise MeasureError(
            f"support [{mu.atoms[0]}, {mu.atoms[-1]}] outside grid range [{x_min}, {x_max}]"
        )
    pos = np.empty(2 * len(mu))
    mass = np.zeros(2 * len(mu))
    for k, (y, w) in enumerate(zip(mu.atoms, mu.weights)):
        frac = (y - x_min) / h
        i = int(np.floor(frac))
        i = min(max(i, 0), n_cells - 1)
        lam = frac - i
        if lam < _SNAP_TOL:
            lam = 0.0
        elif lam > 1.0 - _SNAP_TOL:
            i += 1
            lam = 0.0
            i = min(i, n_cells)
        pos[2 * k] = x_min + i * h
        pos[2 * k + 1] = x_min + min(i + 1, n_cells) * h
        mass[2 * k] = w * (1.0 - lam)
        mass[2 * k + 1] = w * lam
    keep = mass > 0.0
    return DiscreteMeasure(pos[keep], mass[keep])
