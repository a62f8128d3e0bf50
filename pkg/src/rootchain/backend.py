"""Backend selection for the hot loops.

The compiled extension is used when it imported; otherwise the numpy
fallback.  Both expose the same four functions with bit-identical
numerics, so selection never changes results, only speed.  ``active()``
returns the selected module; pass ``core=`` to the solver entry points to
pin a specific one (tests and benchmarks do).
"""

from __future__ import annotations

from . import _core_py

try:
    from . import _core
except ImportError:
    _core = None

_selected = _core if _core is not None else _core_py


def active():
    """The backend module in use."""
    return _selected


def available() -> dict[str, object]:
    """Name -> module for every importable backend."""
    out = {"python": _core_py}
    if _core is not None:
        out["compiled"] = _core
    return out


def name() -> str:
    return _selected.BACKEND_NAME
