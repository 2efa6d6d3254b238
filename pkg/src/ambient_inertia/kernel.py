"""Backend selection for the integrator inner loop.

The compiled extension is used when it was built; otherwise the NumPy
reference implementation is used. Set ``AMBIENT_INERTIA_BACKEND=python`` to
force the fallback.
"""
from __future__ import annotations

import os

from . import _kernel_py

BACKENDS = {"python": _kernel_py.StepKernel}

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None
else:
    BACKENDS["compiled"] = _kernel_c.StepKernel

if os.environ.get("AMBIENT_INERTIA_BACKEND", "").lower() == "python" or _kernel_c is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def step_kernel_class(backend: str | None = None):
    name = BACKEND if backend is None else backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
