"""Compare the compiled core against the numpy fallback on the hot loops.

Each section prepares one workload, runs it once per backend on fresh
copies of the inputs, and reports best-of-N wall times.  Outputs are also
compared: the backends promise bit-identical results, so any mismatch is
reported loudly.

Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats N] [--paths N]
"""

import argparse
import time

import numpy as np

from rootchain import backend
from rootchain.measures import DiscreteMeasure
from rootchain.peacock import family_from_dict
from rootchain.root import (
    GridSpec,
    build_chain,
    monte_carlo_embed,
    sample_chain,
    solve_barrier,
)

GRID = {"x_min": -8.0, "x_max": 8.0, "h": 0.025}


def best_of(repeats, fn):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_obstacle(cores, repeats):
    fam = family_from_dict(
        {"family": "gaussian", "variances": [1.0, 2.0], "grid": GRID}
    )
    mu, nu = fam.measures
    grid = GridSpec(GRID["x_min"], GRID["x_max"], GRID["h"])
    results = {}
    for name, core in cores.items():
        results[name] = best_of(
            repeats, lambda core=core: solve_barrier(mu, nu, grid, core=core)
        )
    entries = {n: r[1][0].entry_time for n, r in results.items()}
    return "obstacle solve (641 points)", results, entries


def bench_monte_carlo(cores, repeats, n_paths):
    mu = DiscreteMeasure.point_mass(0.0)
    nu = DiscreteMeasure.uniform([-1.0, 1.0])
    barrier, _ = solve_barrier(mu, nu, GridSpec(-2.0, 2.0, 0.05))
    results = {}
    for name, core in cores.items():
        results[name] = best_of(
            repeats,
            lambda core=core: monte_carlo_embed(mu, barrier, n_paths, 7, core=core),
        )
    laws = {n: r[1] for n, r in results.items()}
    return f"monte carlo embed ({n_paths} paths)", results, laws


def bench_sample_chain(cores, repeats, n_paths):
    peacock = family_from_dict(
        {
            "family": "gaussian",
            "variances": [0.25, 0.5, 0.75, 1.0],
            "grid": {"x_min": -8.0, "x_max": 8.0, "h": 0.05},
        }
    )
    chain = build_chain(peacock, GridSpec(-8.0, 8.0, 0.05))
    mu0 = chain.realized[0]
    kernels = list(chain.kernels)
    results = {}
    for name, core in cores.items():
        results[name] = best_of(
            repeats,
            lambda core=core: sample_chain(mu0, kernels, n_paths, 23, core=core),
        )
    paths = {n: r[1] for n, r in results.items()}
    return f"chain sampling ({n_paths} paths x 3 kernels)", results, paths


def equal_outputs(outputs):
    names = list(outputs)
    if len(names) < 2:
        return True
    a, b = outputs[names[0]], outputs[names[1]]
    if isinstance(a, DiscreteMeasure):
        return a == b
    return np.array_equal(a, b)


def report(title, results, outputs):
    print(f"\n{title}")
    base = results.get("python", (float("nan"), None))[0]
    for name in sorted(results):
        secs = results[name][0]
        note = "" if name == "python" else f"  ({base / secs:.1f}x vs python)"
        print(f"  {name:10s} {secs * 1e3:9.2f} ms{note}")
    if not equal_outputs(outputs):
        print("  WARNING: backends disagree; bit-identity contract broken")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--paths", type=int, default=100_000)
    args = ap.parse_args()

    cores = backend.available()
    print(f"backends: {', '.join(sorted(cores))} (active: {backend.name()})")
    if "compiled" not in cores:
        print("compiled extension not built; timing the fallback only")

    report(*bench_obstacle(cores, args.repeats))
    report(*bench_monte_carlo(cores, args.repeats, args.paths))
    report(*bench_sample_chain(cores, args.repeats, args.paths))


if __name__ == "__main__":
    main()
