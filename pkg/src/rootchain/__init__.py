"""Markov martingales fitting convex-ordered discrete marginals.

The pipeline: validate that a finite family of discrete measures increases
in convex order, couple each consecutive pair by running Brownian motion to
a Root stopping barrier computed from an obstacle problem on potential
functions, and chain the resulting one-step kernels into a path measure
whose marginals match the family and whose kernels move conditional laws
no farther (in W1) than their conditioning points moved.
"""

from .measures import (
    DiscreteMeasure,
    MeasureError,
    convex_order,
    fsd,
    project_to_grid,
    w1,
)
from .peacock import LabeledFamily, Peacock, PeacockError
from .kernels import MartingaleKernel, PathMeasure
from .root import (
    Barrier,
    GridSpec,
    ObstacleSolution,
    RootError,
    build_chain,
    extract_kernel,
    isotone_hitting_check,
    monte_carlo_embed,
    sample_chain,
    solve_barrier,
)
from .strassen import Infeasible, TransportLP, feasible_coupling, min_cost_coupling

__version__ = "0.1.0"

__all__ = [
    "Barrier",
    "DiscreteMeasure",
    "GridSpec",
    "Infeasible",
    "LabeledFamily",
    "MartingaleKernel",
    "MeasureError",
    "ObstacleSolution",
    "PathMeasure",
    "Peacock",
    "PeacockError",
    "RootError",
    "TransportLP",
    "build_chain",
    "convex_order",
    "extract_kernel",
    "feasible_coupling",
    "fsd",
    "isotone_hitting_check",
    "min_cost_coupling",
    "monte_carlo_embed",
    "project_to_grid",
    "sample_chain",
    "solve_barrier",
    "w1",
]
