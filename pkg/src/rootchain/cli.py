"""Batch pipeline over the library: validate, chain, simulate, report.

Subcommands
    validate        convex-order and right-continuity report for a family
    chain           barriers + kernels + certification for every pair
    simulate        seeded trajectories through a saved kernel chain
    counterexample  the two-path family whose Markov property dies in the limit
    root            one pair end to end: barrier, kernel, optional Monte Carlo

Every run writes ``manifest.json`` with the config echo, library versions,
seed, and the input file hash; no timestamps ever enter an artifact, JSON
keys are sorted, and floats print as their shortest round-trip form, so two
runs with equal manifests produce byte-identical artifacts.

Exit codes: 0 success, 1 verification failure, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__, backend
from .kernels import (
    KernelError,
    MartingaleKernel,
    counterexample,
    is_lipschitz_markov,
    is_markov,
    is_martingale,
    lq_inequality_check,
    marginal,
    path_upcrossings,
    pushforward,
    threshold_functional,
    validate_kernel,
)
from .measures import DiscreteMeasure, MeasureError, project_to_grid, w1
from .peacock import (
    PeacockError,
    family_from_dict,
    right_continuity_report,
    validate,
)
from .root import (
    GridSpec,
    RootError,
    build_chain,
    extract_kernel_report,
    isotone_hitting_check,
    monte_carlo_embed_report,
    sample_chain,
    solve_barrier,
)

N_DRIFT_BUCKETS = 20


class _InputError(Exception):
    """File missing, unreadable, or structurally malformed."""


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation, fully resolved.

    Seed is mandatory whenever simulation is requested so nondeterminism
    can never happen silently.
    """

    command: str
    out: str
    input: str | None = None
    h: float | None = None
    dt: float | None = None
    t_max: float | None = None
    n_paths: int = 0
    seed: int | None = None
    tol_order: float = 1e-9
    tol_stop: float = 1e-8
    tol_leak: float = 1e-6
    tol_contact: float | None = None

    def __post_init__(self) -> None:
        for name in ("tol_order", "tol_stop", "tol_leak", "tol_contact"):
            v = getattr(self, name)
            if v is not None and v <= 0.0:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")
        if self.n_paths < 0:
            raise ValueError("--n-paths must be nonnegative")
        simulating = self.command == "simulate" or (
            self.command == "root" and self.n_paths > 0
        )
        if simulating and self.seed is None:
            raise ValueError("--seed is required when simulation is requested")


# -- deterministic artifact writing ----------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _json_default(o):
    # numpy scalars slip into reports; their JSON forms are exact
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_json(path: str, obj) -> None:
    with open(path, "w", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def _load_json(path: str | None):
    if path is None:
        raise _InputError("--input is required for this subcommand")
    try:
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from exc
    except (ValueError, UnicodeDecodeError) as exc:
        raise _InputError(f"{path} is not valid JSON: {exc}") from exc


def _sha256(path: str | None) -> str | None:
    if path is None:
        return None
    try:
        with open(path, "rb") as f:
            return hashlib.sha256(f.read()).hexdigest()
    except OSError as exc:
        raise _InputError(f"cannot read {path}: {exc}") from exc


def _write_manifest(config: RunConfig, input_path: str | None) -> None:
    manifest = {
        "command": config.command,
        "config": dataclasses.asdict(config),
        "input_sha256": _sha256(input_path),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "backend": backend.name(),
        },
    }
    _write_json(os.path.join(config.out, "manifest.json"), manifest)


def _prepare_out(config: RunConfig, input_path: str | None = None) -> None:
    os.makedirs(config.out, exist_ok=True)
    _write_manifest(config, input_path if input_path is not None else config.input)


# -- grid resolution -------------------------------------------------------


def _grid_from(config: RunConfig, file_grid, supports) -> GridSpec:
    """Grid from flags and file, flags winning; range derived when absent.

    A derived range pads the union support by two cells on each side so no
    target mass sits in the boundary rows the solver pins to the obstacle.
    """
    fg = file_grid if isinstance(file_grid, dict) else {}
    h = config.h if config.h is not None else fg.get("h")
    if h is None:
        raise _InputError("grid step is missing; pass --h or put grid.h in the input")
    h = float(h)
    if h <= 0.0:
        raise _InputError("--h must be positive")
    dt = config.dt if config.dt is not None else fg.get("dt")
    t_max = config.t_max if config.t_max is not None else fg.get("t_max")
    if "x_min" in fg and "x_max" in fg:
        x_min, x_max = float(fg["x_min"]), float(fg["x_max"])
    else:
        lo = min(float(m.atoms[0]) for m in supports)
        hi = max(float(m.atoms[-1]) for m in supports)
        x_min = h * math.floor(lo / h) - 2.0 * h
        x_max = h * math.ceil(hi / h) + 2.0 * h
    try:
        return GridSpec(x_min=x_min, x_max=x_max, h=h, dt=dt, t_max=t_max)
    except RootError as exc:
        raise _InputError(f"bad grid: {exc}") from exc


# -- subcommands -----------------------------------------------------------


def cmd_validate(config: RunConfig) -> int:
    data = _load_json(config.input)
    try:
        p = family_from_dict(data)
    except (PeacockError, MeasureError) as exc:
        raise _InputError(f"malformed peacock input: {exc}") from exc
    _prepare_out(config)
    report = validate(p, config.tol_order)
    continuity = right_continuity_report(p)
    _write_json(
        os.path.join(config.out, "validation.json"),
        {
            "times": list(p.times),
            "n_measures": len(p),
            "validation": report.to_dict(),
            "right_continuity": continuity.to_dict(),
        },
    )
    if report.passed:
        print(f"validate: PASS ({len(p)} measures, {len(p) - 1} pairs)")
        return 0
    print(f"validate: FAIL at pairs {report.failing_pairs()}")
    return 1


def cmd_chain(config: RunConfig) -> int:
    data = _load_json(config.input)
    try:
        p = family_from_dict(data)
    except (PeacockError, MeasureError) as exc:
        raise _InputError(f"malformed peacock input: {exc}") from exc
    _prepare_out(config)

    vreport = validate(p, config.tol_order)
    _write_json(
        os.path.join(config.out, "validation.json"),
        {"times": list(p.times), "validation": vreport.to_dict()},
    )
    if not vreport.passed:
        print(f"chain: validation stage failed at pairs {vreport.failing_pairs()}")
        return 1

    grid = _grid_from(config, data.get("grid"), p.measures)
    try:
        result = build_chain(
            p,
            grid,
            contact_tol=config.tol_contact,
            stop_tol=config.tol_stop,
            leak_tol=config.tol_leak,
        )
    except RootError as exc:
        print(f"chain: barrier stage failed: {exc}")
        return 1

    pair_reports = []
    all_ok = True
    for i, kernel in enumerate(result.kernels):
        sol = result.solutions[i]
        kr = validate_kernel(kernel)
        lm_ok, cert = is_lipschitz_markov(kernel, config.tol_order)
        push_gap = w1(result.realized[i + 1], _target(p, grid, i + 1))
        ok = kr.passed and lm_ok and sol.converged
        all_ok = all_ok and ok
        pair_reports.append(
            {
                "index": i,
                "t_lo": p.times[i],
                "t_hi": p.times[i + 1],
                "certified": ok,
                "martingale": kr.to_dict(),
                "lipschitz_markov": cert.to_dict(),
                "pushforward_w1": push_gap,
                "solver": sol.summary(),
                "absorption": result.absorption[i].to_dict(),
            }
        )
        status = "certified" if ok else "FAILED"
        print(
            f"chain: kernel {i} [t={p.times[i]:g} -> {p.times[i + 1]:g}] {status}: "
            f"martingale dev {max(kr.deviations):.3g}, "
            f"LM {'pass' if lm_ok else 'fail'}, "
            f"leak {result.absorption[i].max_leak:.3g}, "
            f"pushforward W1 {push_gap:.3g}"
        )

    _write_json(
        os.path.join(config.out, "kernels.json"),
        {
            "times": list(p.times),
            "mu0": result.realized[0].to_dict(),
            "kernels": [k.to_dict() for k in result.kernels],
            "marginals": [_target(p, grid, i).to_dict() for i in range(len(p))],
        },
    )
    _write_json(
        os.path.join(config.out, "barriers.json"),
        [b.to_dict() for b in result.barriers],
    )
    for i, b in enumerate(result.barriers):
        _write_csv(
            os.path.join(config.out, f"barrier_{i:02d}.csv"),
            "x,entry_time",
            zip(b.grid.points(), b.entry_time),
        )
    _write_json(
        os.path.join(config.out, "certification.json"),
        {"all_certified": all_ok, "pairs": pair_reports},
    )
    n = len(result.kernels)
    print(f"chain: {'OK' if all_ok else 'FAILED'} ({n} kernel{'s' if n != 1 else ''})")
    return 0 if all_ok else 1


def _target(p, grid: GridSpec, i: int) -> DiscreteMeasure:
    """Stated marginal i, grid-projected like the chain builder sees it."""
    m = p.measures[i]
    try:
        grid.indices_of(m.atoms)
    except RootError:
        return project_to_grid(m, grid)
    return m


def cmd_simulate(config: RunConfig) -> int:
    path = config.input
    if path is None:
        raise _InputError("--input is required for this subcommand")
    if os.path.isdir(path):
        path = os.path.join(path, "kernels.json")
    data = _load_json(path)
    try:
        mu0 = DiscreteMeasure.from_dict(data["mu0"])
        chain = [MartingaleKernel.from_dict(k) for k in data["kernels"]]
        times = [float(t) for t in data["times"]]
        targets = [DiscreteMeasure.from_dict(m) for m in data["marginals"]]
    except (KeyError, TypeError, MeasureError, KernelError) as exc:
        raise _InputError(f"bad chain artifact {path}: {exc}") from exc
    if len(times) != len(chain) + 1 or len(targets) != len(times):
        raise _InputError(f"bad chain artifact {path}: inconsistent lengths")
    _prepare_out(config, input_path=path)

    paths = sample_chain(mu0, chain, config.n_paths, config.seed or 0)
    _write_csv(
        os.path.join(config.out, "paths.csv"),
        ",".join(_fmt(t) for t in times),
        paths,
    )

    report: dict = {
        "n_paths": config.n_paths,
        "seed": config.seed,
        "times": times,
        "per_time": [],
        "drift": None,
        "upcrossings": None,
    }
    if config.n_paths > 0:
        for k, t in enumerate(times):
            atoms, counts = np.unique(paths[:, k], return_counts=True)
            emp = DiscreteMeasure(atoms, counts / counts.sum())
            report["per_time"].append(
                {"t": t, "w1": w1(emp, targets[k]), "support_size": int(atoms.size)}
            )
        report["drift"] = _drift_report(paths)
        report["upcrossings"] = _upcrossing_report(paths, targets[-1])
        worst = max(r["w1"] for r in report["per_time"])
        print(
            f"simulate: {config.n_paths} paths, worst marginal W1 {worst:.4g}, "
            f"max drift {report['drift']['max_drift']:.4g}"
        )
    else:
        print("simulate: 0 paths requested, wrote header-only CSV")
    _write_json(os.path.join(config.out, "simulation.json"), report)
    return 0


def _drift_report(paths: np.ndarray) -> dict:
    """Conditional-mean drift of each step, bucketed by the current value.

    Buckets are quantile cells of S_k (duplicates merged, so discrete
    supports give fewer, fatter buckets); within each occupied bucket the
    martingale property makes the mean increment zero up to sampling
    noise.
    """
    if paths.shape[1] < 2:
        return {"n_buckets_requested": N_DRIFT_BUCKETS, "per_step": [], "max_drift": 0.0}
    steps = []
    for k in range(paths.shape[1] - 1):
        col = paths[:, k]
        nxt = paths[:, k + 1]
        edges = np.unique(np.quantile(col, np.linspace(0.0, 1.0, N_DRIFT_BUCKETS + 1)))
        nb = max(1, edges.size - 1)
        idx = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, nb - 1)
        buckets = []
        for b in range(nb):
            mask = idx == b
            n = int(np.count_nonzero(mask))
            if n == 0:
                continue
            buckets.append(
                {
                    "bucket": b,
                    "n": n,
                    "drift": float(np.abs(np.mean(nxt[mask] - col[mask]))),
                }
            )
        steps.append(
            {
                "step": k,
                "n_buckets": nb,
                "buckets": buckets,
                "max_drift": max(b["drift"] for b in buckets),
            }
        )
    return {
        "n_buckets_requested": N_DRIFT_BUCKETS,
        "per_step": steps,
        "max_drift": max(s["max_drift"] for s in steps),
    }


def _upcrossing_report(paths: np.ndarray, terminal: DiscreteMeasure) -> dict:
    """Upcrossings of the interquartile band of the terminal marginal."""
    a, b = terminal.quantile(0.25), terminal.quantile(0.75)
    if not a < b:
        return {"band": [a, b], "note": "degenerate band, no count"}
    counts = np.array([path_upcrossings(row, a, b) for row in paths])
    return {
        "band": [a, b],
        "mean": float(counts.mean()),
        "max": int(counts.max()),
        "frac_positive": float(np.mean(counts > 0)),
    }


def cmd_counterexample(config: RunConfig) -> int:
    _prepare_out(config)
    limit = counterexample(math.inf)
    entries = []
    for n in (1, 2, 4, 8):
        P = counterexample(n)
        entries.append(
            {
                "n": n,
                "is_markov": is_markov(P),
                "is_martingale": is_martingale(P),
                "w1_to_limit": [
                    w1(marginal(P, t), marginal(limit, t)) for t in P.times
                ],
                "measure": P.to_dict(),
            }
        )
        print(
            f"counterexample: n={n} markov={entries[-1]['is_markov']} "
            f"middle W1 to limit={entries[-1]['w1_to_limit'][1]:g}"
        )
    X = threshold_functional(limit, limit.times[0], 0.0, complement=True)
    Y = threshold_functional(limit, limit.times[0], 0.0)
    lhs, rhs, holds = lq_inequality_check(
        limit, limit.times[1], limit.times[2], lambda x: x, X, Y
    )
    entries.append(
        {
            "n": "limit",
            "is_markov": is_markov(limit),
            "is_martingale": is_martingale(limit),
            "w1_to_limit": [0.0, 0.0, 0.0],
            "measure": limit.to_dict(),
            "decoupling": {"lhs": lhs, "rhs": rhs, "holds": holds},
        }
    )
    print(
        f"counterexample: limit markov={entries[-1]['is_markov']} "
        f"decoupling lhs={lhs:g} rhs={rhs:g} holds={holds}"
    )
    _write_json(os.path.join(config.out, "counterexample.json"), {"members": entries})
    return 0


def cmd_root(config: RunConfig) -> int:
    data = _load_json(config.input)
    if not isinstance(data, dict) or "mu" not in data or "nu" not in data:
        raise _InputError("input must be an object with 'mu' and 'nu'")
    try:
        mu = DiscreteMeasure.from_dict(data["mu"])
        nu = DiscreteMeasure.from_dict(data["nu"])
    except MeasureError as exc:
        raise _InputError(f"bad measure: {exc}") from exc
    grid = _grid_from(config, data.get("grid"), (mu, nu))
    _prepare_out(config)

    mu_g = _snap(mu, grid)
    nu_g = _snap(nu, grid)
    try:
        barrier, sol = solve_barrier(
            mu_g,
            nu_g,
            grid,
            contact_tol=config.tol_contact,
            stop_tol=config.tol_stop,
        )
        kernel, absorption = extract_kernel_report(mu_g, barrier, config.tol_leak)
    except RootError as exc:
        print(f"root: solve failed: {exc}")
        return 1
    grid = barrier.grid  # t_max now resolved

    kr = validate_kernel(kernel)
    lm_ok, cert = is_lipschitz_markov(kernel, config.tol_order)
    push = pushforward(mu_g, kernel)
    report = {
        "solver": sol.summary(),
        "martingale": kr.to_dict(),
        "lipschitz_markov": cert.to_dict(),
        "absorption": absorption.to_dict(),
        "pushforward_w1_to_projected": w1(push, nu_g),
        "pushforward_w1_to_input": w1(push, nu),
        "kernel_sources": len(kernel),
    }

    if config.n_paths > 0:
        emp, mc = monte_carlo_embed_report(
            mu_g, barrier, config.n_paths, config.seed or 0
        )
        iso = True
        if len(mu_g) > 1:
            iso = isotone_hitting_check(
                barrier,
                float(mu_g.atoms[0]),
                float(mu_g.atoms[-1]),
                n_paths=min(config.n_paths, 10**4),
                seed=config.seed or 0,
            )
        report["monte_carlo"] = {
            **mc.to_dict(),
            "w1_to_projected": w1(emp, nu_g),
            "w1_to_input": w1(emp, nu),
            "isotone_extremes": iso,
            "empirical": emp.to_dict(),
        }

    _write_csv(
        os.path.join(config.out, "barrier.csv"),
        "x,entry_time",
        zip(grid.points(), barrier.entry_time),
    )
    _write_json(os.path.join(config.out, "barrier.json"), barrier.to_dict())
    _write_json(os.path.join(config.out, "kernel.json"), kernel.to_dict())
    _write_json(os.path.join(config.out, "root.json"), report)

    ok = kr.passed and lm_ok and sol.converged
    print(
        f"root: {'OK' if ok else 'FAILED'}: residual {sol.residual:.3g} "
        f"in {sol.n_steps} steps, leak {absorption.max_leak:.3g}, "
        f"kernel W1 to target {report['pushforward_w1_to_input']:.3g}"
    )
    return 0 if ok else 1


def _snap(m: DiscreteMeasure, grid: GridSpec) -> DiscreteMeasure:
    try:
        grid.indices_of(m.atoms)
    except RootError:
        return project_to_grid(m, grid)
    return m


# -- entry point -----------------------------------------------------------


def _add_common(sp, *, grid: bool = False, mc: bool = False, tols: bool = False):
    sp.add_argument("--out", required=True, help="output directory")
    if grid:
        sp.add_argument("--h", type=float, default=None, help="grid step")
        sp.add_argument("--dt", type=float, default=None, help="time step (default h^2/2)")
        sp.add_argument("--t-max", type=float, default=None, help="time horizon")
    if mc:
        sp.add_argument("--n-paths", type=int, default=0, help="Monte Carlo paths")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed")
    if tols:
        sp.add_argument("--tol-stop", type=float, default=1e-8)
        sp.add_argument("--tol-leak", type=float, default=1e-6)
        sp.add_argument("--tol-contact", type=float, default=None)
    sp.add_argument("--tol-order", type=float, default=1e-9)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rootchain",
        description="Fit a Markov martingale to convex-ordered discrete marginals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="convex-order report for a measure family")
    sp.add_argument("--input", required=True)
    _add_common(sp)

    sp = sub.add_parser("chain", help="barriers, kernels, and certification")
    sp.add_argument("--input", required=True)
    _add_common(sp, grid=True, tols=True)

    sp = sub.add_parser("simulate", help="sample trajectories from saved kernels")
    sp.add_argument("--input", required=True, help="chain output dir or kernels.json")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-paths", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)

    sp = sub.add_parser("counterexample", help="Markov-but-not-in-the-limit family")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("root", help="single pair: barrier, kernel, Monte Carlo")
    sp.add_argument("--input", required=True, help="JSON with 'mu' and 'nu'")
    _add_common(sp, grid=True, mc=True, tols=True)

    return parser


_DISPATCH = {
    "validate": cmd_validate,
    "chain": cmd_chain,
    "simulate": cmd_simulate,
    "counterexample": cmd_counterexample,
    "root": cmd_root,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {k: v for k, v in vars(args).items() if k in fields}
    try:
        config = RunConfig(**kwargs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _DISPATCH[config.command](config)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
