"""Barrier computation and the couplings it induces.

For a convex-ordered pair the stopping region is computed as the contact
set of an explicit finite-difference obstacle problem run on potential
functions: the source potential rises under heat flow and is clamped at
the target potential from above, and a grid point joins the barrier at
the first time the clamp binds there.  The induced coupling is the
absorption law of the trinomial walk matched to the same stencil, taken
either exactly (mass propagation) or empirically (seeded Monte Carlo).

Randomness contract: all simulation uses the counter-based Philox
generator.  Paths are split into fixed-size blocks; block b of a run with
seed s draws from ``numpy.random.Philox(key=(s, b))``, consuming first
the start-sampling uniforms (when starts are sampled), then one chunk of
walk uniforms per CHUNK_STEPS steps, laid out as (paths, steps) arrays.
Identical seeds therefore reproduce identical output bit for bit, on
every backend, at any block schedule.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import backend
from .kernels import MartingaleKernel, _match_sources, pushforward
from .measures import DiscreteMeasure, convex_order
from .peacock import Peacock

BLOCK_PATHS = 16384
CHUNK_STEPS = 256
_MASK64 = (1 << 64) - 1


class RootError(ValueError):
    """Invalid solver input (order violation, off-grid support, leaks)."""


def _block_rng(seed: int, block: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, block & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# -- grid and barrier ------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time lattice for the solver and the walks.

    dt defaults to h^2/2, half the stability limit of the explicit
    stencil, which keeps the walk's stay probability at 1/2 and avoids
    the parity artifacts of the degenerate dt = h^2 scheme.  t_max may be
    left None and is then resolved per pair (4 * variance gap + 1).
    """

    x_min: float
    x_max: float
    h: float
    dt: float | None = None
    t_max: float | None = None

    def __post_init__(self) -> None:
        x_min, x_max, h = float(self.x_min), float(self.x_max), float(self.h)
        if not (math.isfinite(x_min) and math.isfinite(x_max) and x_max > x_min):
            raise RootError("need finite x_min < x_max")
        if h <= 0.0:
            raise RootError("h must be positive")
        cells = (x_max - x_min) / h
        if abs(cells - round(cells)) > 1e-9 * (1.0 + abs(cells)) or round(cells) < 2:
            raise RootError("(x_max - x_min)/h must be an integer >= 2")
        dt = h * h / 2.0 if self.dt is None else float(self.dt)
        if dt <= 0.0 or dt > h * h * (1.0 + 1e-12):
            raise RootError("need 0 < dt <= h^2 for walk probabilities in [0, 1]")
        t_max = self.t_max
        if t_max is not None:
            t_max = float(t_max)
            if t_max <= 0.0:
                raise RootError("t_max must be positive")
        object.__setattr__(self, "x_min", x_min)
        object.__setattr__(self, "x_max", x_max)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "t_max", t_max)

    @property
    def n_points(self) -> int:
        return int(round((self.x_max - self.x_min) / self.h)) + 1

    def points(self) -> np.ndarray:
        # Positions are always x_min + i*h so grids and measures agree bitwise.
        return self.x_min + self.h * np.arange(self.n_points)

    def index_of(self, x: float) -> int:
        i = int(round((float(x) - self.x_min) / self.h))
        if i < 0 or i >= self.n_points or abs(self.x_min + i * self.h - x) > 1e-9:
            raise RootError(f"position {x!r} is not a grid point")
        return i

    def indices_of(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.index_of(x) for x in np.asarray(xs).ravel()], dtype=np.int64)


@dataclass(frozen=True)
class Barrier:
    """Entry time of each grid point into the stopping region.

    The region {(t, x_i) : t >= entry_time[i]} is right-closed in time by
    construction, which is the barrier property; +inf marks points that
    never enter.
    """

    grid: GridSpec
    entry_time: np.ndarray

    def __post_init__(self) -> None:
        et = np.asarray(self.entry_time, dtype=np.float64).ravel()
        if et.size != self.grid.n_points:
            raise RootError("one entry time per grid point required")
        if np.any(np.isnan(et)) or np.any(et < 0.0):
            raise RootError("entry times must be nonnegative or +inf")
        et.setflags(write=False)
        object.__setattr__(self, "entry_time", et)

    def entry_steps(self) -> np.ndarray:
        """Entry expressed in dt steps; -1 where the point never enters."""
        dt = self.grid.dt
        steps = np.full(self.entry_time.size, -1, dtype=np.int64)
        finite = np.isfinite(self.entry_time)
        steps[finite] = np.ceil(self.entry_time[finite] / dt - 1e-9).astype(np.int64)
        np.maximum(steps, -1, out=steps)
        return steps

    def to_dict(self) -> dict:
        return {
            "x_min": self.grid.x_min,
            "x_max": self.grid.x_max,
            "h": self.grid.h,
            "dt": self.grid.dt,
            "t_max": self.grid.t_max,
            "entry_time": [
                None if math.isinf(t) else float(t) for t in self.entry_time
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Barrier":
        grid = GridSpec(
            x_min=data["x_min"],
            x_max=data["x_max"],
            h=data["h"],
            dt=data.get("dt"),
            t_max=data.get("t_max"),
        )
        et = np.array(
            [math.inf if t is None else float(t) for t in data["entry_time"]]
        )
        return cls(grid, et)


@dataclass(frozen=True)
class ObstacleSolution:
    """Evidence object of one solver run."""

    grid: GridSpec
    v: np.ndarray
    obstacle: np.ndarray
    residual: float
    n_steps: int
    converged: bool
    boundary_nu_mass: float

    def summary(self) -> dict:
        return {
            "residual": self.residual,
            "n_steps": self.n_steps,
            "converged": self.converged,
            "boundary_nu_mass": self.boundary_nu_mass,
        }


# -- solver ----------------------------------------------------------------


def _resolve_t_max(grid: GridSpec, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    if grid.t_max is not None:
        return grid.t_max
    return 4.0 * (nu.variance() - mu.variance()) + 1.0


def solve_barrier(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    grid: GridSpec,
    contact_tol: float | None = None,
    stop_tol: float = 1e-8,
    boundary_tol: float = 1e-6,
    core=None,
) -> tuple[Barrier, ObstacleSolution]:
    """Contact-set barrier embedding nu into the walk started from mu.

    The potential of mu evolves by the explicit heat stencil and is
    clamped at the potential of nu (convex order makes the clamp one
    sided); a point's entry time is the first step where the clamp binds
    within contact_tol.  Iteration stops when the residual on the
    nu-support falls below stop_tol or t_max is reached; non-convergence
    is reported on the solution object, not raised.  nu-mass on or
    outside the penultimate grid cells is tolerated up to boundary_tol
    and recorded (the boundary rows are held at the obstacle, so such
    mass is embedded only approximately).
    """
    core = core if core is not None else backend.active()
    if not convex_order(mu, nu):
        raise RootError("pair is not in convex order")
    t_max = _resolve_t_max(grid, mu, nu)
    grid = dataclasses.replace(grid, t_max=t_max)
    dt, h = grid.dt, grid.h
    n_steps = int(math.ceil(t_max / dt - 1e-9))
    xs = grid.points()
    grid.indices_of(mu.atoms)  # raises when off-grid
    nu_idx = grid.indices_of(nu.atoms)

    outside = (nu.atoms <= grid.x_min + h + 1e-12) | (
        nu.atoms >= grid.x_max - h - 1e-12
    )
    boundary_mass = float(nu.weights[outside].sum())
    if boundary_mass > boundary_tol:
        raise RootError(
            f"nu-mass {boundary_mass:.3e} at the grid boundary exceeds {boundary_tol:g}"
        )

    v = mu.potential(xs)
    obstacle = nu.potential(xs)
    v[0] = obstacle[0]
    v[-1] = obstacle[-1]
    if contact_tol is None:
        contact_tol = 1e-10 * (1.0 + float(np.max(np.abs(obstacle))))

    entry_step = np.full(xs.size, -1, dtype=np.int64)
    entry_step[(obstacle - v) <= contact_tol] = 0

    support_idx = np.asarray(nu_idx, dtype=np.int64)
    residual = float(np.max(obstacle[support_idx] - v[support_idx]))
    steps = 0
    if residual > stop_tol and n_steps > 0:
        lam = dt / (2.0 * h * h)
        steps, residual = core.obstacle_run(
            v, obstacle, support_idx, entry_step, lam, contact_tol, stop_tol, n_steps
        )

    entry_time = np.where(entry_step < 0, math.inf, entry_step * dt)
    barrier = Barrier(grid, entry_time)
    solution = ObstacleSolution(
        grid=grid,
        v=v,
        obstacle=obstacle,
        residual=residual,
        n_steps=steps,
        converged=residual <= stop_tol,
        boundary_nu_mass=boundary_mass,
    )
    return barrier, solution


# -- kernel extraction -----------------------------------------------------


@dataclass(frozen=True)
class AbsorptionReport:
    """Leak accounting of an exact kernel extraction."""

    leaks: np.ndarray  # unabsorbed mass per source at t_max
    max_leak: float
    leak_tol: float

    def to_dict(self) -> dict:
        return {
            "leaks": self.leaks.tolist(),
            "max_leak": self.max_leak,
            "leak_tol": self.leak_tol,
        }


def extract_kernel_report(
    mu: DiscreteMeasure,
    barrier: Barrier,
    leak_tol: float = 1e-6,
    core=None,
) -> tuple[MartingaleKernel, AbsorptionReport]:
    """Exact absorption law of the walk from every source atom.

    Mass vectors are propagated under the trinomial stencil (stay
    probability 1 - dt/h^2, move +-h with dt/2h^2 each) with absorption
    at entered points, so the kernel is the walk's absorbed law with no
    sampling error.  Rows are normalized; the unabsorbed remainder at
    t_max is the reported leak.
    """
    core = core if core is not None else backend.active()
    grid = barrier.grid
    if grid.t_max is None:
        raise RootError("barrier grid needs t_max to bound the propagation")
    dt, h = grid.dt, grid.h
    n_steps = int(math.ceil(grid.t_max / dt - 1e-9))
    lam = dt / (2.0 * h * h)
    om2l = 1.0 - (lam + lam)
    entry_step = barrier.entry_steps()
    xs = grid.points()
    src_idx = grid.indices_of(mu.atoms)

    targets = []
    leaks = np.empty(len(mu))
    for k, gi in enumerate(src_idx):
        p = np.zeros(xs.size)
        absorbed = np.zeros(xs.size)
        p[gi] = 1.0
        if entry_step[gi] == 0:
            absorbed[gi] = 1.0
            p[gi] = 0.0
        else:
            core.propagate_absorb(p, absorbed, entry_step, lam, om2l, n_steps)
        leaks[k] = float(p.sum())
        total = absorbed.sum()
        if total <= 0.0:
            raise RootError(
                f"no mass absorbed from source {mu.atoms[k]!r}; barrier unreachable"
            )
        occ = absorbed > 0.0
        targets.append(DiscreteMeasure(xs[occ], absorbed[occ] / total))
    kernel = MartingaleKernel(mu.atoms, tuple(targets))
    report = AbsorptionReport(
        leaks=leaks, max_leak=float(leaks.max()), leak_tol=leak_tol
    )
    return kernel, report


def extract_kernel(
    mu: DiscreteMeasure,
    barrier: Barrier,
    leak_tol: float = 1e-6,
    core=None,
) -> MartingaleKernel:
    """extract_kernel_report without the report; warns when leak exceeds tol."""
    kernel, report = extract_kernel_report(mu, barrier, leak_tol, core)
    if report.max_leak > leak_tol:
        warnings.warn(
            f"unabsorbed mass {report.max_leak:.3e} exceeds leak_tol {leak_tol:g}; "
            "kernel rows were renormalized",
            stacklevel=2,
        )
    return kernel


# -- Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class EmbedReport:
    n_paths: int
    absorbed: int
    truncated: int
    seed: int
    backend: str

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "absorbed": self.absorbed,
            "truncated": self.truncated,
            "seed": self.seed,
            "backend": self.backend,
        }


def monte_carlo_embed_report(
    mu: DiscreteMeasure,
    barrier: Barrier,
    n_paths: int,
    seed: int,
    core=None,
) -> tuple[DiscreteMeasure, EmbedReport]:
    """Empirical absorbed law of n_paths simulated walks.

    Start points are drawn from mu by inverse CDF, then each path runs
    the trinomial walk until absorption or t_max.  Identical seeds give
    bit-identical results on either backend (see the module docstring for
    the block RNG contract).  Truncated paths are counted, not included.
    """
    core = core if core is not None else backend.active()
    grid = barrier.grid
    if grid.t_max is None:
        raise RootError("barrier grid needs t_max to bound the walks")
    if n_paths <= 0:
        raise RootError("n_paths must be positive")
    dt, h = grid.dt, grid.h
    n_steps = int(math.ceil(grid.t_max / dt - 1e-9))
    lam = dt / (2.0 * h * h)
    two_lam = lam + lam
    entry_step = barrier.entry_steps()
    xs = grid.points()
    atom_idx = grid.indices_of(mu.atoms)
    cum_mu = np.cumsum(mu.weights)

    counts = np.zeros(xs.size, dtype=np.int64)
    truncated = 0
    for b in range(0, (n_paths + BLOCK_PATHS - 1) // BLOCK_PATHS):
        m = min(BLOCK_PATHS, n_paths - b * BLOCK_PATHS)
        rng = _block_rng(seed, b)
        pick = np.searchsorted(cum_mu, rng.random(m), side="right")
        pos = atom_idx[np.minimum(pick, len(mu) - 1)].copy()
        out = np.full(m, -1, dtype=np.int64)
        out[entry_step[pos] == 0] = pos[entry_step[pos] == 0]
        alive = int(np.count_nonzero(out < 0))
        step = 1
        while alive > 0 and step <= n_steps:
            c = min(CHUNK_STEPS, n_steps - step + 1)
            U = rng.random((m, c))
            alive = core.walk_chunk(pos, out, U, entry_step, lam, two_lam, step)
            step += c
        hit = out[out >= 0]
        counts += np.bincount(hit, minlength=xs.size)
        truncated += int(m - hit.size)

    total = int(counts.sum())
    if total == 0:
        raise RootError("no path was absorbed; barrier unreachable within t_max")
    occ = counts > 0
    empirical = DiscreteMeasure(xs[occ], counts[occ] / total)
    report = EmbedReport(
        n_paths=n_paths,
        absorbed=total,
        truncated=truncated,
        seed=seed,
        backend=core.BACKEND_NAME,
    )
    return empirical, report


def monte_carlo_embed(
    mu: DiscreteMeasure,
    barrier: Barrier,
    n_paths: int,
    seed: int,
    core=None,
) -> DiscreteMeasure:
    return monte_carlo_embed_report(mu, barrier, n_paths, seed, core)[0]


def isotone_hitting_check(
    barrier: Barrier,
    x: float,
    x_prime: float,
    n_paths: int = 10**4,
    seed: int = 0,
    core=None,
) -> bool:
    """Pathwise monotonicity of absorption under common noise.

    Two walks from x <= x' consume the same uniforms; because lattice
    paths move one cell at a time and the barrier is right-closed in
    time, the upper walk can never be absorbed strictly below the lower
    one on the same noise.  Verifies exactly that on every simulated
    pair; pairs where either walk is truncated are skipped.
    """
    core = core if core is not None else backend.active()
    grid = barrier.grid
    if grid.t_max is None:
        raise RootError("barrier grid needs t_max to bound the walks")
    if x > x_prime:
        raise RootError("need x <= x_prime")
    dt, h = grid.dt, grid.h
    n_steps = int(math.ceil(grid.t_max / dt - 1e-9))
    lam = dt / (2.0 * h * h)
    two_lam = lam + lam
    entry_step = barrier.entry_steps()
    gi, gj = grid.index_of(x), grid.index_of(x_prime)

    for b in range(0, (n_paths + BLOCK_PATHS - 1) // BLOCK_PATHS):
        m = min(BLOCK_PATHS, n_paths - b * BLOCK_PATHS)
        rng = _block_rng(seed, b)
        pos_a = np.full(m, gi, dtype=np.int64)
        pos_b = np.full(m, gj, dtype=np.int64)
        out_a = np.full(m, -1, dtype=np.int64)
        out_b = np.full(m, -1, dtype=np.int64)
        if entry_step[gi] == 0:
            out_a[:] = gi
        if entry_step[gj] == 0:
            out_b[:] = gj
        alive_a = int(np.count_nonzero(out_a < 0))
        alive_b = int(np.count_nonzero(out_b < 0))
        step = 1
        while (alive_a > 0 or alive_b > 0) and step <= n_steps:
            c = min(CHUNK_STEPS, n_steps - step + 1)
            U = rng.random((m, c))
            alive_a = core.walk_chunk(pos_a, out_a, U, entry_step, lam, two_lam, step)
            alive_b = core.walk_chunk(pos_b, out_b, U, entry_step, lam, two_lam, step)
            step += c
        both = (out_a >= 0) & (out_b >= 0)
        if np.any(out_a[both] > out_b[both]):
            return False
    return True


# -- chain sampling --------------------------------------------------------


def _flatten_kernel(K: MartingaleKernel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(offsets, cumulative weights, atoms) of the ragged kernel rows."""
    sizes = np.array([len(t) for t in K.targets], dtype=np.int64)
    offsets = np.zeros(len(K) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    cumflat = np.concatenate([np.cumsum(t.weights) for t in K.targets])
    atomflat = np.concatenate([t.atoms for t in K.targets])
    return offsets, cumflat, atomflat


def sample_chain(
    mu0: DiscreteMeasure,
    chain: list[MartingaleKernel],
    n_paths: int,
    seed: int,
    core=None,
) -> np.ndarray:
    """Sample trajectories through a kernel chain, one row per path.

    Exact categorical sampling per kernel row by inverse CDF; blockwise
    Philox streams as in the walk simulators (per block: start uniforms,
    then one uniform vector per chain step).  Returns an array of shape
    (n_paths, len(chain) + 1).
    """
    core = core if core is not None else backend.active()
    K = len(chain)
    paths = np.empty((n_paths, K + 1))
    if n_paths == 0:
        return paths
    flat = [_flatten_kernel(k) for k in chain]
    cum_mu = np.cumsum(mu0.weights)
    for b in range(0, (n_paths + BLOCK_PATHS - 1) // BLOCK_PATHS):
        lo = b * BLOCK_PATHS
        m = min(BLOCK_PATHS, n_paths - lo)
        rng = _block_rng(seed, b)
        pick = np.searchsorted(cum_mu, rng.random(m), side="right")
        values = mu0.atoms[np.minimum(pick, len(mu0) - 1)]
        paths[lo : lo + m, 0] = values
        for k, kern in enumerate(chain):
            offsets, cumflat, atomflat = flat[k]
            rows = _match_sources(kern.sources, values).astype(np.int64)
            out = np.empty(m, dtype=np.int64)
            core.sample_rows(rows, offsets, cumflat, rng.random(m), out)
            values = atomflat[out]
            paths[lo : lo + m, k + 1] = values
    return paths


# -- chain construction ----------------------------------------------------


@dataclass(frozen=True)
class ChainResult:
    """Kernels coupling consecutive marginals plus per-pair evidence."""

    kernels: tuple[MartingaleKernel, ...]
    barriers: tuple[Barrier, ...]
    solutions: tuple[ObstacleSolution, ...]
    absorption: tuple[AbsorptionReport, ...]
    realized: tuple[DiscreteMeasure, ...]  # realized marginals, step 0..K


def build_chain(
    peacock: Peacock,
    grid: GridSpec,
    contact_tol: float | None = None,
    stop_tol: float = 1e-8,
    leak_tol: float = 1e-6,
    core=None,
) -> ChainResult:
    """Couple consecutive marginals of a validated peacock.

    Each barrier is solved for the given pair; the kernel is then
    extracted at the realized marginal's support (the pushforward of the
    previous steps), which can differ from the stated marginal by the
    accumulated embedding error, so composition is exact by construction.
    """
    proj = [_projected(m, grid) for m in peacock.measures]
    kernels: list[MartingaleKernel] = []
    barriers: list[Barrier] = []
    solutions: list[ObstacleSolution] = []
    reports: list[AbsorptionReport] = []
    realized = [proj[0]]
    for i in range(len(proj) - 1):
        barrier, sol = solve_barrier(
            proj[i], proj[i + 1], grid, contact_tol, stop_tol, core=core
        )
        kernel, rep = extract_kernel_report(realized[i], barrier, leak_tol, core=core)
        kernels.append(kernel)
        barriers.append(barrier)
        solutions.append(sol)
        reports.append(rep)
        realized.append(pushforward(realized[i], kernel))
    return ChainResult(
        kernels=tuple(kernels),
        barriers=tuple(barriers),
        solutions=tuple(solutions),
        absorption=tuple(reports),
        realized=tuple(realized),
    )


def _projected(m: DiscreteMeasure, grid: GridSpec) -> DiscreteMeasure:
    from .measures import project_to_grid

    try:
        grid.indices_of(m.atoms)
    except RootError:
        return project_to_grid(m, grid)
    return m
