"""Martingale kernels, Lipschitz-Markov certification, and path measures.

A kernel is a disintegration: one target measure per source atom, with the
target mean equal to the source (checked by ``validate_kernel``, reported
rather than assumed).  The Lipschitz-Markov property is certified through
first-order stochastic dominance of consecutive rows, which on the line is
equivalent to the W1 distance between rows equaling the source gap, the
smallest value any martingale kernel can achieve.  Chains of kernels
enumerate into finite path measures with exact martingale and Markov
checkers, including the two-path family whose limit is a martingale but
not Markov.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measures import ORDER_TOL, DiscreteMeasure, fsd, w1

# Source atoms are matched exactly up to this slack when propagating mass.
SOURCE_MATCH_TOL = 1e-12

# Histories below this mass are skipped in conditional checks.
_MASS_SKIP = 1e-15


class KernelError(ValueError):
    """Structural kernel or path-measure problem."""


# -- kernel type -----------------------------------------------------------


@dataclass(frozen=True)
class MartingaleKernel:
    """One target measure per source atom.

    ``sources`` is strictly increasing.  The martingale property
    mean(targets[i]) == sources[i] is what validate_kernel checks; the
    constructor only enforces structure so that defective kernels can be
    built and reported on.
    """

    sources: np.ndarray
    targets: tuple[DiscreteMeasure, ...]

    def __post_init__(self) -> None:
        sources = np.asarray(self.sources, dtype=np.float64).ravel()
        targets = tuple(self.targets)
        if sources.size == 0:
            raise KernelError("kernel needs at least one source")
        if sources.size != len(targets):
            raise KernelError("sources and targets must have equal length")
        if not np.all(np.isfinite(sources)):
            raise KernelError("sources must be finite")
        if sources.size > 1 and np.any(np.diff(sources) <= 0.0):
            raise KernelError("sources must be strictly increasing")
        if not all(isinstance(t, DiscreteMeasure) for t in targets):
            raise KernelError("targets must be DiscreteMeasure instances")
        sources.setflags(write=False)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "targets", targets)

    def __len__(self) -> int:
        return int(self.sources.size)

    @classmethod
    def identity(cls, atoms) -> "MartingaleKernel":
        xs = np.asarray(atoms, dtype=np.float64)
        return cls(xs, tuple(DiscreteMeasure.point_mass(x) for x in xs))

    def row(self, x: float) -> DiscreteMeasure:
        """Target measure of the source atom matching x within tolerance."""
        i = _match_sources(self.sources, np.array([x]))[0]
        return self.targets[i]

    def to_dict(self) -> dict:
        return {
            "sources": self.sources.tolist(),
            "targets": [t.to_dict() for t in self.targets],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MartingaleKernel":
        if not isinstance(data, dict) or "sources" not in data or "targets" not in data:
            raise KernelError("expected an object with 'sources' and 'targets'")
        targets = tuple(DiscreteMeasure.from_dict(t) for t in data["targets"])
        return cls(np.asarray(data["sources"], dtype=np.float64), targets)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _match_sources(sources: np.ndarray, values: np.ndarray, tol: float = SOURCE_MATCH_TOL) -> np.ndarray:
    """Index of each value among the sources, exact within tol."""
    idx = np.searchsorted(sources, values)
    idx = np.clip(idx, 0, sources.size - 1)
    left = np.clip(idx - 1, 0, sources.size - 1)
    pick = np.where(
        np.abs(sources[left] - values) < np.abs(sources[idx] - values), left, idx
    )
    bad = np.abs(sources[pick] - values) > tol
    if np.any(bad):
        missing = values[bad][0]
        raise KernelError(f"value {missing!r} does not match any source atom")
    return pick


# -- kernel operations -----------------------------------------------------


@dataclass(frozen=True)
class KernelReport:
    """Per-source martingale deviations |mean(pi_x) - x|."""

    passed: bool
    deviations: tuple[float, ...]
    worst_index: int
    tol: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "deviations": list(self.deviations),
            "worst_index": self.worst_index,
            "tol": self.tol,
        }


def validate_kernel(K: MartingaleKernel, tol: float = 1e-9) -> KernelReport:
    """Check the martingale property of every row."""
    devs = tuple(float(abs(t.mean() - x)) for x, t in zip(K.sources, K.targets))
    worst = max(range(len(devs)), key=devs.__getitem__)
    return KernelReport(
        passed=devs[worst] <= tol, deviations=devs, worst_index=worst, tol=tol
    )


def pushforward(mu: DiscreteMeasure, K: MartingaleKernel) -> DiscreteMeasure:
    """Propagate mu through the kernel: nu = sum_i mu_i pi_{x_i}."""
    rows = _match_sources(K.sources, mu.atoms)
    atoms = np.concatenate([K.targets[r].atoms for r in rows])
    weights = np.concatenate(
        [w * K.targets[r].weights for w, r in zip(mu.weights, rows)]
    )
    return DiscreteMeasure(atoms, weights)


def compose(K1: MartingaleKernel, K2: MartingaleKernel) -> MartingaleKernel:
    """Chain two kernels: (K1 K2)_x = sum_y pi1_x({y}) pi2_y.

    Every target atom of K1 must match a source of K2.
    """
    targets = tuple(pushforward(t, K2) for t in K1.targets)
    return MartingaleKernel(K1.sources, targets)


@dataclass(frozen=True)
class LMPairRecord:
    """One consecutive-pair record of a Lipschitz-Markov certificate."""

    index: int
    x_lo: float
    x_hi: float
    gap: float
    fsd_ok: bool
    w1: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "x_lo": self.x_lo,
            "x_hi": self.x_hi,
            "gap": self.gap,
            "fsd_ok": self.fsd_ok,
            "w1": self.w1,
        }


@dataclass(frozen=True)
class LMCertificate:
    passed: bool
    pairs: tuple[LMPairRecord, ...]
    tol: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "pairs": [p.to_dict() for p in self.pairs],
        }


def is_lipschitz_markov(
    K: MartingaleKernel, tol: float = ORDER_TOL
) -> tuple[bool, LMCertificate]:
    """Certify that conditional laws move no farther than their sources.

    On the line, W1 between consecutive rows equals the source gap exactly
    when the lower row precedes the upper in first-order stochastic
    dominance; dominance is transitive, so consecutive checks settle every
    pair.  The certificate carries both the dominance verdict and the
    measured W1 per pair.
    """
    records = []
    for i in range(len(K) - 1):
        lo, hi = K.targets[i], K.targets[i + 1]
        gap = float(K.sources[i + 1] - K.sources[i])
        records.append(
            LMPairRecord(
                index=i,
                x_lo=float(K.sources[i]),
                x_hi=float(K.sources[i + 1]),
                gap=gap,
                fsd_ok=fsd(lo, hi, tol),
                w1=w1(lo, hi),
            )
        )
    passed = all(r.fsd_ok for r in records)
    return passed, LMCertificate(passed=passed, pairs=tuple(records), tol=tol)


def w1_profile(K: MartingaleKernel) -> np.ndarray:
    """W1 between consecutive rows; never below the source gap."""
    return np.array([w1(K.targets[i], K.targets[i + 1]) for i in range(len(K) - 1)])


def hinge(a: float) -> Callable[[np.ndarray], np.ndarray]:
    """The 1-Lipschitz test function y -> |y - a|."""

    def f(y):
        return np.abs(np.asarray(y, dtype=np.float64) - a)

    f.__name__ = f"hinge_{a:g}"
    return f


def lip1_test_family(K: MartingaleKernel) -> list[tuple[str, Callable]]:
    """Extreme 1-Lipschitz test functions for this kernel.

    Hinges kinked at every target atom plus the two signed identities; on
    finitely supported rows these attain the W1 dual supremum, so passing
    the whole family certifies the Lip-1 bound for every Lip-1 function.
    """
    kinks = np.unique(np.concatenate([t.atoms for t in K.targets]))
    family: list[tuple[str, Callable]] = [
        ("identity", lambda y: np.asarray(y, dtype=np.float64)),
        ("neg_identity", lambda y: -np.asarray(y, dtype=np.float64)),
    ]
    family.extend((f"hinge@{a:g}", hinge(a)) for a in kinks)
    return family


def lipschitz_conditional(
    K: MartingaleKernel, f: Callable, tol: float = ORDER_TOL
) -> tuple[np.ndarray, bool]:
    """Conditional expectations x -> int f d pi_x with a Lip-1 verdict.

    The verdict checks |g(x_{i+1}) - g(x_i)| <= gap + tol for every
    consecutive source pair.
    """
    g = np.array([float(t.weights @ f(t.atoms)) for t in K.targets])
    gaps = np.diff(K.sources)
    ok = bool(np.all(np.abs(np.diff(g)) <= gaps + tol))
    return g, ok


# -- path measures ---------------------------------------------------------


@dataclass(frozen=True)
class PathMeasure:
    """Finitely supported measure on path space, one column per time."""

    times: tuple[float, ...]
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        times = tuple(float(t) for t in self.times)
        support = np.asarray(self.support, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if support.ndim != 2:
            raise KernelError("support must be a 2-D array (paths x times)")
        if len(times) != support.shape[1]:
            raise KernelError("one support column per time required")
        if support.shape[0] != weights.size or weights.size == 0:
            raise KernelError("one weight per path required")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise KernelError("times must be strictly increasing")
        if not np.all(np.isfinite(support)) or not np.all(np.isfinite(weights)):
            raise KernelError("paths and weights must be finite")
        if np.any(weights < 0.0):
            raise KernelError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise KernelError(f"path weights sum to {total!r}, expected 1")
        # Canonical form: lexicographically sorted unique paths.
        uniq, inverse = np.unique(support, axis=0, return_inverse=True)
        merged = np.zeros(uniq.shape[0])
        np.add.at(merged, inverse.ravel(), weights)
        keep = merged > 0.0
        uniq = uniq[keep]
        merged = merged[keep] / merged[keep].sum()
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "support", uniq)
        object.__setattr__(self, "weights", merged)

    @property
    def n_paths(self) -> int:
        return int(self.support.shape[0])

    def time_index(self, t: float) -> int:
        for i, s in enumerate(self.times):
            if s == t or abs(s - t) <= 1e-12:
                return i
        raise KernelError(f"time {t!r} not in path measure grid")

    def to_dict(self) -> dict:
        return {
            "times": list(self.times),
            "paths": self.support.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PathMeasure":
        if not isinstance(data, dict) or not {"times", "paths", "weights"} <= set(data):
            raise KernelError("expected an object with 'times', 'paths', 'weights'")
        return cls(
            times=tuple(float(t) for t in data["times"]),
            support=np.asarray(data["paths"], dtype=np.float64),
            weights=np.asarray(data["weights"], dtype=np.float64),
        )


def chain_to_path_measure(
    mu0: DiscreteMeasure,
    chain: Sequence[MartingaleKernel],
    times: Sequence[float],
    cap: int = 10**6,
) -> PathMeasure:
    """Enumerate every path of a kernel chain started from mu0.

    Path weights are the products of branch probabilities; the marginal at
    step k reproduces the k-fold pushforward.  Refuses to enumerate more
    than ``cap`` paths.
    """
    if len(times) != len(chain) + 1:
        raise KernelError("need exactly one time per step plus the start")
    paths = mu0.atoms[:, None].copy()
    weights = mu0.weights.copy()
    for K in chain:
        rows = _match_sources(K.sources, paths[:, -1])
        sizes = np.array([len(K.targets[r]) for r in rows])
        if int(sizes.sum()) > cap:
            raise KernelError(f"path enumeration exceeds cap of {cap} paths")
        rep = np.repeat(np.arange(paths.shape[0]), sizes)
        new_col = np.concatenate([K.targets[r].atoms for r in rows])
        branch_w = np.concatenate([K.targets[r].weights for r in rows])
        paths = np.hstack([paths[rep], new_col[:, None]])
        weights = weights[rep] * branch_w
    return PathMeasure(times=tuple(times), support=paths, weights=weights)


def marginal(P: PathMeasure, t: float) -> DiscreteMeasure:
    """One-time projection of the path measure."""
    j = P.time_index(t)
    return DiscreteMeasure(P.support[:, j], P.weights)


def is_martingale(P: PathMeasure, tol: float = 1e-9) -> bool:
    """Conditional-mean check over every positive-mass history prefix."""
    for k in range(len(P.times) - 1):
        groups: dict[tuple, tuple[float, float]] = {}
        for path, w in zip(P.support, P.weights):
            key = tuple(path[: k + 1])
            mass, moment = groups.get(key, (0.0, 0.0))
            groups[key] = (mass + w, moment + w * path[k + 1])
        for key, (mass, moment) in groups.items():
            if mass < _MASS_SKIP:
                continue
            if abs(moment / mass - key[-1]) > tol:
                return False
    return True


def _conditional_futures(
    P: PathMeasure, k: int
) -> tuple[dict[tuple, dict[tuple, float]], dict[float, dict[tuple, float]]]:
    """Futures (S_{k+1},...) grouped by full prefix and by current value."""
    by_prefix: dict[tuple, dict[tuple, float]] = {}
    by_value: dict[float, dict[tuple, float]] = {}
    for path, w in zip(P.support, P.weights):
        prefix = tuple(path[: k + 1])
        future = tuple(path[k + 1 :])
        by_prefix.setdefault(prefix, {})
        by_prefix[prefix][future] = by_prefix[prefix].get(future, 0.0) + w
        v = path[k]
        by_value.setdefault(v, {})
        by_value[v][future] = by_value[v].get(future, 0.0) + w
    return by_prefix, by_value


def is_markov(P: PathMeasure, tol: float = 1e-9) -> bool:
    """Full-future Markov check.

    For every step k, the law of the whole future given the history prefix
    must match (in total variation) the law given only the current value.
    Comparing one-step laws is not enough: the two-path limit family is
    one-step fine but leaks S_1 into S_3.
    """
    for k in range(len(P.times) - 1):
        by_prefix, by_value = _conditional_futures(P, k)
        for prefix, futures in by_prefix.items():
            mass = sum(futures.values())
            if mass < _MASS_SKIP:
                continue
            pooled = by_value[prefix[-1]]
            pooled_mass = sum(pooled.values())
            keys = set(futures) | set(pooled)
            tv = 0.5 * sum(
                abs(futures.get(f, 0.0) / mass - pooled.get(f, 0.0) / pooled_mass)
                for f in keys
            )
            if tv > tol:
                return False
    return True


def counterexample(n) -> PathMeasure:
    """Two-path family whose members are Markov but whose limit is not.

    For finite n >= 1: mass 1/2 on each of (1, 1/n, 1) and (-1, -1/n, -1).
    The middle value reveals the sign, so each member is Markov.  Pass
    math.inf for the weak limit: paths (1, 0, 1) and (-1, 0, -1), which is
    not Markov because S_3 depends on S_1 while S_2 carries no
    information.  Plain Markov measures are therefore not weakly closed;
    the decoupling inequality (see lq_inequality_check) is what survives
    limits, and the limit measure violates it.
    """
    if n == math.inf:
        mid = 0.0
    else:
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError(f"n must be a positive integer or math.inf, got {n!r}")
        mid = 1.0 / n
    support = np.array([[1.0, mid, 1.0], [-1.0, -mid, -1.0]])
    return PathMeasure(
        times=(1.0 / 3.0, 2.0 / 3.0, 1.0),
        support=support,
        weights=np.array([0.5, 0.5]),
    )


def threshold_functional(
    P: PathMeasure, q: float, c: float, complement: bool = False
) -> Callable[[np.ndarray], float]:
    """Indicator 1{S_q <= c} (or its complement) as a path functional.

    Only reads the coordinate at time q, so it is measurable for the
    history up to any s >= q.
    """
    j = P.time_index(q)

    def X(path: np.ndarray) -> float:
        inside = path[j] <= c
        return float(inside != complement)

    return X


def product_functional(*fs: Callable) -> Callable[[np.ndarray], float]:
    def X(path: np.ndarray) -> float:
        out = 1.0
        for f in fs:
            out *= f(path)
        return out

    return X


def lq_inequality_check(
    P: PathMeasure,
    s: float,
    t: float,
    f: Callable,
    X,
    Y,
    tol: float = 1e-9,
) -> tuple[float, float, bool]:
    """Decoupling inequality for Lipschitz-Markov limits.

    lhs = E[X f(S_t)] E[Y] - E[X] E[Y f(S_t)] with f 1-Lipschitz and X, Y
    nonnegative bounded functions of the history up to s; rhs integrates
    X(w) Y(w') |w_s - w'_s| over independent path pairs.  Every limit of
    Lipschitz-Markov chains satisfies lhs <= rhs; the non-Markov two-path
    limit violates it.  X and Y may be callables on path vectors or
    per-path value arrays.
    """
    js, jt = P.time_index(s), P.time_index(t)
    if js >= jt:
        raise KernelError("need s < t on the time grid")
    Xv = _functional_values(P, X)
    Yv = _functional_values(P, Y)
    if np.any(Xv < 0.0) or np.any(Yv < 0.0):
        raise KernelError("X and Y must be nonnegative")
    ft = np.asarray(f(P.support[:, jt]), dtype=np.float64)
    w = P.weights
    lhs = float((w @ (Xv * ft)) * (w @ Yv) - (w @ Xv) * (w @ (Yv * ft)))
    ss = P.support[:, js]
    dist = np.abs(ss[:, None] - ss[None, :])
    rhs = float((w * Xv) @ dist @ (w * Yv))
    return lhs, rhs, lhs <= rhs + tol


def _functional_values(P: PathMeasure, X) -> np.ndarray:
    if callable(X):
        return np.array([float(X(path)) for path in P.support])
    arr = np.asarray(X, dtype=np.float64).ravel()
    if arr.size != P.n_paths:
        raise KernelError("functional value array must have one entry per path")
    return arr


def path_upcrossings(path, a: float, b: float) -> int:
    """Upcrossings of the finite sequence through [a, b].

    Counts completed passages from a value <= a to a later value >= b.
    """
    if a >= b:
        raise ValueError(f"need a < b, got a={a!r}, b={b!r}")
    count = 0
    below = False
    for x in np.asarray(path, dtype=np.float64).ravel():
        if not below:
            if x <= a:
                below = True
        elif x >= b:
            count += 1
            below = False
    return count
