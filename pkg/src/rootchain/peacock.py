"""Time-indexed families of measures increasing in convex order.

A ``Peacock`` couples a strictly increasing grid of times in [0, 1] (last
time exactly 1) with one measure per time.  Validation checks the convex
order pair by pair and reports the worst call-price violation instead of
throwing.  A ``LabeledFamily`` carries measures indexed by an arbitrary
totally ordered label set; ``reparametrize`` maps it onto [0, 1] through
the integral of the strictly convex gauge sqrt(1 + x^2), which is constant
in a label interval exactly when the measures are.  ``interpolate`` fills
gaps with mixtures, which keep the family convex-order monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .measures import (
    ORDER_TOL,
    DiscreteMeasure,
    MeasureError,
    convex_order,
    project_to_grid,
    worst_call_violation,
)


class PeacockError(ValueError):
    """Structurally invalid family data."""


def phi_integral(mu: DiscreteMeasure) -> float:
    """Integral of sqrt(1 + y^2) against mu.

    Strictly convex with linear growth, so it is constant between two
    convex-ordered measures only when they coincide; used as the canonical
    clock for reparametrization.
    """
    return float(mu.weights @ np.sqrt(1.0 + mu.atoms**2))


@dataclass(frozen=True)
class Peacock:
    """Measures on a strictly increasing time grid ending at 1."""

    times: tuple[float, ...]
    measures: tuple[DiscreteMeasure, ...]

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        measures = tuple(self.measures)
        if len(times) == 0:
            raise PeacockError("peacock needs at least one time")
        if len(times) != len(measures):
            raise PeacockError("times and measures must have equal length")
        if any(not math.isfinite(t) for t in times):
            raise PeacockError("times must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise PeacockError("times must be strictly increasing")
        if times[0] < 0.0 or times[-1] != 1.0:
            raise PeacockError("times must lie in [0, 1] with final time 1")
        if not all(isinstance(m, DiscreteMeasure) for m in measures):
            raise PeacockError("measures must be DiscreteMeasure instances")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "measures", measures)

    def __len__(self) -> int:
        return len(self.times)

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "measures": [m.to_dict() for m in self.measures],
        }


@dataclass(frozen=True)
class LabeledFamily:
    """Measures indexed by opaque labels with a declared total order."""

    labels: tuple
    measures: tuple[DiscreteMeasure, ...]

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        measures = tuple(self.measures)
        if len(labels) == 0:
            raise PeacockError("family needs at least one label")
        if len(labels) != len(measures):
            raise PeacockError("labels and measures must have equal length")
        if not all(a < b for a, b in zip(labels, labels[1:])):
            raise PeacockError("labels must be strictly increasing")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "measures", measures)

    def __len__(self) -> int:
        return len(self.labels)


# -- validation ------------------------------------------------------------


@dataclass(frozen=True)
class PairVerdict:
    """Convex-order check for one consecutive pair of marginals."""

    index: int
    t_lo: float
    t_hi: float
    ok: bool
    mean_gap: float
    worst_violation: float
    worst_strike: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "t_lo": self.t_lo,
            "t_hi": self.t_hi,
            "ok": self.ok,
            "mean_gap": self.mean_gap,
            "worst_violation": self.worst_violation,
            "worst_strike": self.worst_strike,
        }


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    pairs: tuple[PairVerdict, ...]
    tol: float

    def failing_pairs(self) -> list[int]:
        return [p.index for p in self.pairs if not p.ok]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "pairs": [p.to_dict() for p in self.pairs],
        }


def validate(p: Peacock, tol: float = ORDER_TOL) -> ValidationReport:
    """Check every consecutive pair for convex order.

    Violations are reported, never raised; the report records per pair the
    mean gap and the largest call-price violation with its strike.
    """
    verdicts = []
    for i in range(len(p) - 1):
        mu, nu = p.measures[i], p.measures[i + 1]
        gap = nu.mean() - mu.mean()
        violation, strike = worst_call_violation(mu, nu)
        ok = abs(gap) <= tol and violation <= tol
        verdicts.append(
            PairVerdict(
                index=i,
                t_lo=p.times[i],
                t_hi=p.times[i + 1],
                ok=ok,
                mean_gap=float(gap),
                worst_violation=float(violation),
                worst_strike=strike,
            )
        )
    return ValidationReport(
        passed=all(v.ok for v in verdicts), pairs=tuple(verdicts), tol=tol
    )


# -- reparametrization and interpolation -----------------------------------


def reparametrize(f: LabeledFamily) -> Peacock:
    """Relabel a convex-order-increasing family onto [0, 1] by its phi clock.

    The time of each measure is its sqrt(1 + x^2)-integral affinely
    rescaled so the first distinct value maps to 0 and the last to 1.
    Runs of equal clock values mean equal measures (strict convexity), so
    they collapse to one entry.  A fully constant family degenerates to a
    single measure at time 1.
    """
    for i in range(len(f) - 1):
        if not convex_order(f.measures[i], f.measures[i + 1]):
            raise PeacockError(f"family is not convex-order increasing at pair {i}")
    phi = [phi_integral(m) for m in f.measures]
    keep_idx = [0]
    for i in range(1, len(f)):
        if phi[i] != phi[keep_idx[-1]]:
            keep_idx.append(i)
    if len(keep_idx) == 1:
        return Peacock(times=(1.0,), measures=(f.measures[0],))
    lo, hi = phi[keep_idx[0]], phi[keep_idx[-1]]
    times = tuple((phi[i] - lo) / (hi - lo) for i in keep_idx)
    return Peacock(times=times, measures=tuple(f.measures[i] for i in keep_idx))


def interpolate(p: Peacock, s: float) -> DiscreteMeasure:
    """Measure at time s: stored at grid times, mixture inside gaps.

    For s in the gap (a, b) returns (1-lam) nu_a + lam nu_b with
    lam = (s-a)/(b-a).  Mixtures keep call prices affine in lam, so the
    interpolated family stays convex-order monotone.
    """
    s = float(s)
    if s < p.times[0] or s > 1.0:
        raise PeacockError(f"time {s!r} outside [{p.times[0]}, 1]")
    for t, m in zip(p.times, p.measures):
        if s == t:
            return m
    j = int(np.searchsorted(np.asarray(p.times), s, side="left"))
    a, b = p.times[j - 1], p.times[j]
    lam = (s - a) / (b - a)
    nu_a, nu_b = p.measures[j - 1], p.measures[j]
    atoms = np.concatenate([nu_a.atoms, nu_b.atoms])
    weights = np.concatenate([(1.0 - lam) * nu_a.weights, lam * nu_b.weights])
    return DiscreteMeasure(atoms, weights)


@dataclass(frozen=True)
class RightContinuityReport:
    """Phi-clock trace along the grid with a monotonicity verdict."""

    times: tuple[float, ...]
    phi_values: tuple[float, ...]
    non_decreasing: bool
    jumps: tuple[float, ...]
    max_jump: float

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "phi_values": list(self.phi_values),
            "non_decreasing": self.non_decreasing,
            "jumps": list(self.jumps),
            "max_jump": self.max_jump,
        }


def right_continuity_report(p: Peacock, tol: float = 1e-12) -> RightContinuityReport:
    """Trace the phi clock along the grid.

    For a valid peacock the clock must be non-decreasing; the jump sizes
    bound how far the family is from a continuous-time interpolant.
    """
    phi = [phi_integral(m) for m in p.measures]
    jumps = tuple(b - a for a, b in zip(phi, phi[1:]))
    return RightContinuityReport(
        times=p.times,
        phi_values=tuple(phi),
        non_decreasing=all(j >= -tol for j in jumps),
        jumps=jumps,
        max_jump=max(jumps, default=0.0),
    )


# -- loading ---------------------------------------------------------------


def _gaussian_on_grid(variance: float, grid) -> DiscreteMeasure:
    """Centered Gaussian truncated to the grid range, then grid-projected.

    Cell masses come from the normal CDF, each cell's mass sits at its
    conditional mean (exact via the density antiderivative), and the
    two-point grid projection keeps that mean.  Renormalization after
    truncation keeps total mass 1.
    """
    if variance <= 0.0:
        raise PeacockError(f"variance must be positive, got {variance!r}")
    x_min, x_max, h = float(grid.x_min), float(grid.x_max), float(grid.h)
    n_cells = int(round((x_max - x_min) / h))
    edges = x_min + h * np.arange(n_cells + 1)
    sd = math.sqrt(variance)
    cdf = np.array([0.5 * (1.0 + math.erf(e / (sd * math.sqrt(2.0)))) for e in edges])
    mass = np.diff(cdf)
    # integral of x * density over a cell, via -v * d/dx density
    dens = np.exp(-(edges**2) / (2.0 * variance)) / (sd * math.sqrt(2.0 * math.pi))
    first_moment = variance * (dens[:-1] - dens[1:])
    occupied = mass > 0.0
    centers = np.where(occupied, first_moment / np.where(occupied, mass, 1.0), 0.0)
    centers = np.clip(centers, edges[:-1], edges[1:])
    raw = DiscreteMeasure(centers[occupied], mass[occupied] / mass[occupied].sum())
    return project_to_grid(raw, grid)


def family_from_dict(data: dict) -> Peacock:
    """Read a peacock from its wire form.

    Two shapes are accepted: explicit {"times": [...], "measures": [...]}
    with each measure an atoms/weights object, or a parametric family
    {"family": "gaussian", "variances": [...], "grid": {"x_min", "x_max",
    "h"}, "times": optional}.  Parametric times default to variance over
    final variance.
    """
    if not isinstance(data, dict):
        raise PeacockError("expected a JSON object")
    if "family" in data:
        if data["family"] != "gaussian":
            raise PeacockError(f"unknown family {data['family']!r}")
        variances = [float(v) for v in data.get("variances", [])]
        if not variances:
            raise PeacockError("gaussian family needs 'variances'")
        if any(b <= a for a, b in zip(variances, variances[1:])):
            raise PeacockError("'variances' must be strictly increasing")
        gspec = data.get("grid")
        if not isinstance(gspec, dict) or not {"x_min", "x_max", "h"} <= set(gspec):
            raise PeacockError("gaussian family needs 'grid' with x_min, x_max, h")
        grid = SimpleNamespace(
            x_min=float(gspec["x_min"]), x_max=float(gspec["x_max"]), h=float(gspec["h"])
        )
        if "times" in data:
            times = [float(t) for t in data["times"]]
        else:
            times = [v / variances[-1] for v in variances]
        measures = [_gaussian_on_grid(v, grid) for v in variances]
        return Peacock(times=tuple(times), measures=tuple(measures))
    if "times" in data and "measures" in data:
        try:
            measures = tuple(DiscreteMeasure.from_dict(m) for m in data["measures"])
        except MeasureError as exc:
            raise PeacockError(f"bad measure entry: {exc}") from exc
        return Peacock(
            times=tuple(float(t) for t in data["times"]), measures=measures
        )
    raise PeacockError("expected 'times'/'measures' or a parametric 'family'")
